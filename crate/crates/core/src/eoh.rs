//! Edge orientation histogram (EOH) features of square windows.
//!
//! A window is split into `c x c` cells; each cell contributes the four
//! orientation-bin magnitude sums read from the page's oriented integrals,
//! L2-normalized per cell. The concatenation (cell-major, bins innermost) is
//! renormalized to unit length, giving `4c^2` dimensions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::proposal::Window;
use crate::raster::{check_rect, oriented_integrals, GrayImage, OrientedIntegrals, ORIENTATION_BINS};

/// Cells per window side used unless configured otherwise.
pub const DEFAULT_CELLS: u32 = 8;

/// Luminance below this counts as ink on a query canvas.
pub const INK_THRESHOLD: u8 = 250;

const CELL_EPS: f64 = 1e-12;

/// Unit-length EOH vector of dimension `4c^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EohFeature {
    cells: u32,
    values: Vec<f32>,
}

impl EohFeature {
    /// Wraps raw values, checking the dimension and renormalizing.
    /// All-zero input yields `None`.
    pub fn from_values(cells: u32, mut values: Vec<f32>) -> Result<Option<EohFeature>> {
        let d = dimension(cells);
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.len(),
            });
        }
        let norm = values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Ok(None);
        }
        values.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        Ok(Some(EohFeature { cells, values }))
    }

    pub fn cells(&self) -> u32 {
        self.cells
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// The four bin values of cell `(row, col)`.
    pub fn cell(&self, row: u32, col: u32) -> &[f32] {
        let i = ((row * self.cells + col) as usize) * ORIENTATION_BINS;
        &self.values[i..i + ORIENTATION_BINS]
    }

    /// Grid view for feature visualizers: `grid[row][col] = [b0, b1, b2, b3]`.
    pub fn grid(&self) -> FeatureGrid {
        let c = self.cells;
        FeatureGrid {
            cells: c,
            grid: (0..c)
                .map(|r| {
                    (0..c)
                        .map(|col| {
                            let v = self.cell(r, col);
                            [v[0], v[1], v[2], v[3]]
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureGrid {
    pub cells: u32,
    pub grid: Vec<Vec<[f32; ORIENTATION_BINS]>>,
}

pub fn dimension(cells: u32) -> usize {
    ORIENTATION_BINS * (cells as usize).pow(2)
}

/// Cell boundaries along one axis: equal steps of `side / c`, with the
/// remainder added to the last cell.
fn cell_spans(start: u32, side: u32, cells: u32) -> impl Iterator<Item = (u32, u32)> {
    let step = side / cells;
    (0..cells).map(move |i| {
        let lo = start + i * step;
        let len = if i + 1 == cells { side - i * step } else { step };
        (lo, len)
    })
}

/// Extracts the EOH of a square region `(x, y, side)`.
pub fn extract_at(
    integrals: &OrientedIntegrals,
    x: u32,
    y: u32,
    side: u32,
    cells: u32,
) -> Result<Option<EohFeature>> {
    if cells == 0 {
        return Err(Error::InvalidParameter("cell count must be >= 1".into()));
    }
    check_rect(x, y, side, side, integrals.width(), integrals.height())?;
    let mut values = Vec::with_capacity(dimension(cells));
    for (cy, ch) in cell_spans(y, side, cells) {
        for (cx, cw) in cell_spans(x, side, cells) {
            let bins = if cw == 0 || ch == 0 {
                [0.0; ORIENTATION_BINS]
            } else {
                integrals.rect_bins(cx, cy, cw, ch)
            };
            let norm = bins.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > CELL_EPS {
                values.extend(bins.iter().map(|v| (v / norm) as f32));
            } else {
                values.extend([0.0f32; ORIENTATION_BINS]);
            }
        }
    }
    EohFeature::from_values(cells, values)
}

/// Extracts the EOH of a window; `None` when the window has no edges.
pub fn extract_eoh(
    integrals: &OrientedIntegrals,
    w: &Window,
    cells: u32,
) -> Result<Option<EohFeature>> {
    extract_at(integrals, w.x, w.y, w.side, cells)
}

/// EOH features of one page, parallel to its windows.
#[derive(Debug, Clone, Default)]
pub struct PageFeatures {
    pub page_id: u32,
    pub windows: Vec<Window>,
    pub features: Vec<EohFeature>,
}

impl PageFeatures {
    /// Describes every window, dropping those without edges.
    pub fn describe(
        page_id: u32,
        integrals: &OrientedIntegrals,
        windows: &[Window],
        cells: u32,
    ) -> Result<PageFeatures> {
        let mut out = PageFeatures {
            page_id,
            ..PageFeatures::default()
        };
        for w in windows {
            if let Some(f) = extract_eoh(integrals, w, cells)? {
                out.windows.push(*w);
                out.features.push(f);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Square enclosing the ink of a canvas, centered on the ink's bounding box
/// and shifted to stay inside the canvas. `None` for a blank canvas.
pub fn ink_square(canvas: &GrayImage) -> Option<(u32, u32, u32)> {
    let (w, h) = (canvas.width(), canvas.height());
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if canvas.get(x, y) < INK_THRESHOLD {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == u32::MAX {
        return None;
    }
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let side = bw.max(bh).min(w).min(h);
    let place = |start: i64, limit: u32| start.clamp(0, (limit - side) as i64) as u32;
    let x = place(x0 as i64 + (bw as i64 - side as i64) / 2, w);
    let y = place(y0 as i64 + (bh as i64 - side as i64) / 2, h);
    Some((x, y, side))
}

/// Feature of a query sketch drawn black on white: the EOH of the square
/// around its ink. `None` when there is no ink or no edge survives the
/// magnitude floor.
pub fn sketch_to_feature(
    canvas: &GrayImage,
    cells: u32,
    magnitude_floor: f64,
) -> Result<Option<EohFeature>> {
    let Some((x, y, side)) = ink_square(canvas) else {
        return Ok(None);
    };
    let integrals = oriented_integrals(canvas, magnitude_floor);
    extract_at(&integrals, x, y, side, cells)
}
