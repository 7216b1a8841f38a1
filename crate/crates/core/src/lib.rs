//! Sketch-based retrieval over black-and-white line-art pages.
//!
//! Pages are indexed as sets of square windows, each described by an edge
//! orientation histogram and compressed with product quantization. A query
//! sketch is described the same way and matched against every stored code by
//! a table-lookup linear scan, which yields both the page and the location of
//! the best match.

pub mod engine;
pub mod eoh;
pub mod error;
pub mod eval;
pub mod index_file;
pub mod margin;
pub mod pq;
pub mod proposal;
pub mod raster;
pub mod segment;
pub mod synth;
pub mod wire;

pub use error::{Error, Result};
