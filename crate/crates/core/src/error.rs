use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image: {0}")]
    Decode(String),

    #[error("page has no white area left after erosion")]
    DegeneratePage,

    #[error("region ({x}, {y}, {w}x{h}) exceeds the {page_w}x{page_h} page")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        page_w: u32,
        page_h: u32,
    },

    #[error("need at least {needed} training samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("code index {index} in subspace {subspace} is out of range (K = {k})")]
    IndexOutOfRange { subspace: usize, index: usize, k: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index contains no pages")]
    EmptyIndex,

    #[error("page {0} not found")]
    PageNotFound(u32),

    #[error("selected region contains no edges")]
    BlankRegion,

    #[error("sketch contains no ink")]
    BlankQuery,

    #[error("corrupt index at byte {offset}: {reason}")]
    CorruptIndex { offset: u64, reason: String },

    #[error("no page could be indexed ({failures} failures)")]
    NoPages { failures: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
