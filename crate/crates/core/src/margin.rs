//! Margin labeling: the white space between frames is the white component
//! that dominates the page border once strokes have been thickened. Windows
//! covering too much of it are skipped before feature extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    binarize, check_rect, erode_white, label_components, CountIntegral, Foreground, GrayImage,
    LabelImage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginConfig {
    pub binarize_threshold: u8,
    pub erosion_radius: u32,
    pub erosion_iterations: u32,
    /// Width of the outer band whose labels vote for the margin component.
    pub border_width: u32,
    /// Windows with margin ratio at or above this are skipped.
    pub threshold: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            binarize_threshold: 128,
            erosion_radius: 1,
            erosion_iterations: 2,
            border_width: 1,
            threshold: 0.1,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if self.erosion_radius == 0 || self.erosion_iterations == 0 || self.border_width == 0 {
            return Err(Error::InvalidParameter(
                "erosion radius, iterations and border width must be >= 1".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "margin threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Per-pixel margin flags plus a summed-area table for O(1) window ratios.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginMask {
    width: u32,
    height: u32,
    mask: Vec<bool>,
    integral: CountIntegral,
}

impl MarginMask {
    pub fn from_mask(width: u32, height: u32, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || mask.len() != width as usize * height as usize {
            return Err(Error::InvalidParameter(format!(
                "{} flags do not form a {width}x{height} mask",
                mask.len()
            )));
        }
        let integral = CountIntegral::new(width, height, |i| mask[i]);
        Ok(MarginMask {
            width,
            height,
            mask,
            integral,
        })
    }

    /// A mask with no margin pixels.
    pub fn empty(width: u32, height: u32) -> Self {
        MarginMask::from_mask(width, height, vec![false; width as usize * height as usize])
            .expect("positive dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn is_margin(&self, x: u32, y: u32) -> bool {
        self.mask[y as usize * self.width as usize + x as usize]
    }

    pub fn margin_pixels(&self) -> u32 {
        self.integral.rect(0, 0, self.width, self.height)
    }

    /// Margin pixel count in a rectangle, bounds-checked.
    pub fn count_in(&self, x: u32, y: u32, w: u32, h: u32) -> Result<u32> {
        check_rect(x, y, w, h, self.width, self.height)?;
        Ok(self.integral.rect(x, y, w, h))
    }

    /// Renders the page with margin pixels tinted, for visual inspection.
    pub fn overlay_png(&self, page: &GrayImage) -> Vec<u8> {
        let mut rgb = image::RgbImage::new(self.width, self.height);
        for (x, y, px) in rgb.enumerate_pixels_mut() {
            let v = page.get(x, y);
            *px = if self.is_margin(x, y) {
                image::Rgb([v / 2 + 64, v / 2 + 127, v / 4])
            } else {
                image::Rgb([v, v, v])
            };
        }
        let mut out = std::io::Cursor::new(Vec::new());
        rgb.write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding does not fail");
        out.into_inner()
    }
}

/// Labels the margin of a page.
///
/// The page is binarized, its white set eroded so that small gaps between
/// strokes close, and the white components labeled. The component occurring
/// most often in the outer `border_width` band becomes the margin (lowest
/// label on ties).
///
/// When nothing white survives the erosion the page is degenerate: the
/// returned error carries an all-false mask that callers may still use.
pub fn compute_margin_mask(
    page: &GrayImage,
    cfg: &MarginConfig,
) -> std::result::Result<MarginMask, DegeneratePage> {
    let labels = margin_labels(page, cfg);
    let (w, h) = (page.width(), page.height());
    let Some(margin_label) = dominant_border_label(&labels, cfg.border_width) else {
        return Err(DegeneratePage {
            mask: MarginMask::empty(w, h),
        });
    };
    let mask = labels.labels().iter().map(|&l| l == margin_label).collect();
    Ok(MarginMask::from_mask(w, h, mask).expect("dimensions follow the page"))
}

/// Returned by [`compute_margin_mask`] for pages without white area.
#[derive(Debug, Clone)]
pub struct DegeneratePage {
    pub mask: MarginMask,
}

impl From<DegeneratePage> for Error {
    fn from(_: DegeneratePage) -> Self {
        Error::DegeneratePage
    }
}

fn margin_labels(page: &GrayImage, cfg: &MarginConfig) -> LabelImage {
    let binary = binarize(page, cfg.binarize_threshold);
    let eroded = erode_white(&binary, cfg.erosion_radius, cfg.erosion_iterations);
    label_components(&eroded, Foreground::White)
}

fn dominant_border_label(labels: &LabelImage, border: u32) -> Option<u32> {
    if labels.label_count() == 0 {
        return None;
    }
    let (w, h) = (labels.width(), labels.height());
    let band = border.min(w).min(h);
    let mut votes = vec![0u64; labels.label_count() as usize];
    for y in 0..h {
        for x in 0..w {
            let on_band = x < band || y < band || x >= w - band || y >= h - band;
            if !on_band {
                continue;
            }
            let l = labels.get(x, y);
            if l != LabelImage::BACKGROUND {
                votes[l as usize] += 1;
            }
        }
    }
    // max_by_key keeps the last maximum; reverse so the lowest label wins.
    votes
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, &v)| v > 0)
        .max_by_key(|(_, &v)| v)
        .map(|(l, _)| l as u32)
}

/// Fraction of a square window covered by margin, `U / S`.
pub fn margin_ratio(mask: &MarginMask, x: u32, y: u32, side: u32) -> Result<f64> {
    let u = mask.count_in(x, y, side, side)?;
    Ok(u as f64 / (side as f64 * side as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw_rect_border(img: &mut GrayImage, x0: u32, y0: u32, x1: u32, y1: u32, t: u32) {
        for y in y0..y1 {
            for x in x0..x1 {
                let inner = x >= x0 + t && x < x1 - t && y >= y0 + t && y < y1 - t;
                if !inner {
                    img.set(x, y, 0);
                }
            }
        }
    }

    #[test]
    fn white_page_is_all_margin() {
        let page = GrayImage::filled(40, 30, 255);
        let mask = compute_margin_mask(&page, &MarginConfig::default()).unwrap();
        assert_eq!(mask.margin_pixels(), 40 * 30);
        assert_eq!(margin_ratio(&mask, 5, 5, 20).unwrap(), 1.0);
    }

    #[test]
    fn black_page_is_degenerate() {
        let page = GrayImage::filled(40, 30, 0);
        let err = compute_margin_mask(&page, &MarginConfig::default()).unwrap_err();
        assert_eq!(err.mask.margin_pixels(), 0);
        assert!(matches!(Error::from(err), Error::DegeneratePage));
    }

    #[test]
    fn frame_interiors_are_not_margin() {
        let mut page = GrayImage::filled(120, 60, 255);
        draw_rect_border(&mut page, 5, 5, 55, 55, 2);
        draw_rect_border(&mut page, 65, 5, 115, 55, 2);
        let mask = compute_margin_mask(&page, &MarginConfig::default()).unwrap();
        // gutter between frames and outer band
        assert!(mask.is_margin(60, 30));
        assert!(mask.is_margin(0, 0));
        assert!(mask.is_margin(119, 59));
        // frame interiors
        assert!(!mask.is_margin(30, 30));
        assert!(!mask.is_margin(90, 30));
        assert_eq!(margin_ratio(&mask, 15, 15, 30).unwrap(), 0.0);
        assert_eq!(margin_ratio(&mask, 57, 10, 6).unwrap(), 1.0);
    }

    #[test]
    fn small_gap_in_frame_is_closed() {
        let mut page = GrayImage::filled(60, 60, 255);
        draw_rect_border(&mut page, 5, 5, 55, 55, 3);
        for y in 5..8 {
            page.set(30, y, 255);
        }
        let mask = compute_margin_mask(&page, &MarginConfig::default()).unwrap();
        assert!(!mask.is_margin(30, 30));
    }

    #[test]
    fn ratio_of_partially_masked_window() {
        // Fig. 6 case (i): 60 of 100 pixels masked.
        let mut flags = vec![false; 20 * 20];
        for y in 0..10 {
            for x in 0..6 {
                flags[y * 20 + x] = true;
            }
        }
        let mask = MarginMask::from_mask(20, 20, flags).unwrap();
        let r = margin_ratio(&mask, 0, 0, 10).unwrap();
        assert_eq!(r, 0.6);
        assert!(r >= MarginConfig::default().threshold);
    }

    #[test]
    fn ratio_out_of_bounds() {
        let mask = MarginMask::empty(20, 20);
        assert!(matches!(
            margin_ratio(&mask, 15, 0, 10),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn border_tie_prefers_lowest_label() {
        // Left and right halves split by a black column; both touch the border
        // equally often.
        let mut page = GrayImage::filled(21, 10, 255);
        for y in 0..10 {
            for x in 9..12 {
                page.set(x, y, 0);
            }
        }
        let cfg = MarginConfig {
            erosion_radius: 1,
            erosion_iterations: 1,
            ..MarginConfig::default()
        };
        let mask = compute_margin_mask(&page, &cfg).unwrap();
        assert!(mask.is_margin(0, 5));
        assert!(!mask.is_margin(20, 5));
    }
}
