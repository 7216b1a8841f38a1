//! Raster planes shared by every stage of the pipeline: grayscale pages,
//! binary masks, component labels and oriented-edge integral images.

use std::path::Path;

use crate::error::{Error, Result};

/// Luminance plane, row-major, one byte per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidParameter(format!(
                "{} bytes do not form a {width}x{height} image",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Constant image. Panics on zero dimensions.
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    /// Copies out a rectangle that must lie inside the image.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<GrayImage> {
        check_rect(x, y, w, h, self.width, self.height)?;
        let mut data = Vec::with_capacity(w as usize * h as usize);
        for row in y..y + h {
            let start = row as usize * self.width as usize + x as usize;
            data.extend_from_slice(&self.data[start..start + w as usize]);
        }
        GrayImage::new(w, h, data)
    }

    /// Converts a decoded image using luma weights (0.299, 0.587, 0.114).
    /// Single-channel inputs pass through unchanged; alpha is composited
    /// over white so transparent canvas areas read as paper.
    pub fn from_dynamic(img: &image::DynamicImage) -> Result<GrayImage> {
        use image::DynamicImage as D;
        let (w, h) = (img.width(), img.height());
        let data = match img {
            D::ImageLuma8(g) => g.as_raw().clone(),
            D::ImageLumaA8(ga) => ga
                .pixels()
                .map(|p| over_white(p.0[0] as f32, p.0[1]))
                .collect(),
            _ => img
                .to_rgba8()
                .pixels()
                .map(|p| {
                    let [r, g, b, a] = p.0;
                    let luma = 0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32;
                    over_white(luma, a)
                })
                .collect(),
        };
        GrayImage::new(w, h, data)
    }

    pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        GrayImage::from_dynamic(&img)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<GrayImage> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        GrayImage::decode(&bytes).map_err(|e| match e {
            Error::Decode(msg) => Error::Decode(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.data.clone())
            .expect("dimensions checked at construction")
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_image()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding does not fail");
        out.into_inner()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }
}

fn over_white(luma: f32, alpha: u8) -> u8 {
    let a = alpha as f32 / 255.0;
    (luma * a + 255.0 * (1.0 - a)).round().clamp(0.0, 255.0) as u8
}

pub(crate) fn check_rect(x: u32, y: u32, w: u32, h: u32, page_w: u32, page_h: u32) -> Result<()> {
    let fits = w >= 1
        && h >= 1
        && (x as u64 + w as u64) <= page_w as u64
        && (y as u64 + h as u64) <= page_h as u64;
    if fits {
        Ok(())
    } else {
        Err(Error::OutOfBounds {
            x,
            y,
            w,
            h,
            page_w,
            page_h,
        })
    }
}

/// Boolean plane; `true` is white (paper), `false` is black (ink).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize {
            return Err(Error::InvalidParameter(format!(
                "{} pixels do not form a {width}x{height} binary image",
                data.len()
            )));
        }
        Ok(BinaryImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, white: bool) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        BinaryImage {
            width,
            height,
            data: vec![white; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn is_white(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, white: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = white;
    }

    pub fn count_white(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// White iff luminance >= threshold.
pub fn binarize(img: &GrayImage, threshold: u8) -> BinaryImage {
    BinaryImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v >= threshold).collect(),
    }
}

/// Erodes the white set with a (2r+1)x(2r+1) square, `iterations` times.
/// Pixels outside the image count as white, so the page border itself does
/// not grow ink.
pub fn erode_white(img: &BinaryImage, radius: u32, iterations: u32) -> BinaryImage {
    let mut out = img.clone();
    for _ in 0..iterations {
        out = erode_once(&out, radius as usize);
    }
    out
}

// A square erosion is separable: a pixel stays white iff no black pixel lies
// within `r` along the row, and then within `r` along the column.
fn erode_once(img: &BinaryImage, r: usize) -> BinaryImage {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut rows = vec![true; w * h];
    let mut prefix = vec![0u32; w.max(h) + 1];
    for y in 0..h {
        let line = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + u32::from(!line[x]);
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            rows[y * w + x] = prefix[hi] == prefix[lo];
        }
    }
    let mut data = vec![true; w * h];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + u32::from(!rows[y * w + x]);
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            data[y * w + x] = prefix[hi] == prefix[lo];
        }
    }
    BinaryImage {
        width: img.width,
        height: img.height,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Foreground {
    White,
    Black,
}

impl Foreground {
    fn matches(self, white: bool) -> bool {
        match self {
            Foreground::White => white,
            Foreground::Black => !white,
        }
    }
}

/// Component ids per pixel. Foreground components are numbered densely in
/// raster order of their first pixel; everything else carries
/// [`LabelImage::BACKGROUND`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    label_count: u32,
}

impl LabelImage {
    pub const BACKGROUND: u32 = u32::MAX;

    pub(crate) fn from_parts(width: u32, height: u32, labels: Vec<u32>, label_count: u32) -> Self {
        debug_assert_eq!(labels.len(), width as usize * height as usize);
        LabelImage {
            width,
            height,
            labels,
            label_count,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_count(&self) -> u32 {
        self.label_count
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }
}

/// 4-connected component labeling of the selected color.
pub fn label_components(img: &BinaryImage, foreground: Foreground) -> LabelImage {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut labels = vec![LabelImage::BACKGROUND; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if labels[start] != LabelImage::BACKGROUND || !foreground.matches(img.data[start]) {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if labels[j] == LabelImage::BACKGROUND && foreground.matches(img.data[j]) {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        next += 1;
    }
    LabelImage {
        width: img.width,
        height: img.height,
        labels,
        label_count: next,
    }
}

/// Summed-area table over a 0/1 plane, `(w+1) x (h+1)` with a zero first row
/// and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountIntegral {
    stride: usize,
    sums: Vec<u32>,
}

impl CountIntegral {
    pub fn new(width: u32, height: u32, set: impl Fn(usize) -> bool) -> Self {
        let (w, h) = (width as usize, height as usize);
        let stride = w + 1;
        let mut sums = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += u32::from(set(y * w + x));
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        CountIntegral { stride, sums }
    }

    /// Number of set pixels in `[x, x+w) x [y, y+h)`; the caller checks bounds.
    #[inline]
    pub fn rect(&self, x: u32, y: u32, w: u32, h: u32) -> u32 {
        let s = self.stride;
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        self.sums[y1 * s + x1] + self.sums[y0 * s + x0]
            - self.sums[y0 * s + x1]
            - self.sums[y1 * s + x0]
    }
}

/// Number of orientation bins partitioning `[0°, 180°)`.
pub const ORIENTATION_BINS: usize = 4;

/// Default gradient magnitude floor, as a fraction of a full black-to-white
/// step edge.
pub const DEFAULT_MAGNITUDE_FLOOR: f64 = 16.0 / 255.0;

/// Sobel responses at `(x, y)` with replicated borders. `gx` grows to the
/// right, `gy` grows downward. Each lies in `[-1020, 1020]`.
#[inline]
pub fn sobel_at(img: &GrayImage, x: u32, y: u32) -> (i32, i32) {
    let (w, h) = (img.width, img.height);
    let xm = x.saturating_sub(1);
    let xp = (x + 1).min(w - 1);
    let ym = y.saturating_sub(1);
    let yp = (y + 1).min(h - 1);
    let p = |xx: u32, yy: u32| img.get(xx, yy) as i32;
    let gx = (p(xp, ym) + 2 * p(xp, y) + p(xp, yp)) - (p(xm, ym) + 2 * p(xm, y) + p(xm, yp));
    let gy = (p(xm, yp) + 2 * p(x, yp) + p(xp, yp)) - (p(xm, ym) + 2 * p(x, ym) + p(xp, ym));
    (gx, gy)
}

/// Orientation bin of an integer gradient, folded into `[0°, 180°)` and
/// split into 45° sectors. A direction exactly on a sector boundary goes to
/// the lower bin. Returns `None` for a zero gradient.
#[inline]
pub fn orientation_bin(gx: i32, gy: i32) -> Option<usize> {
    if gx == 0 && gy == 0 {
        return None;
    }
    // Fold to the upper half plane; angle 180° maps back to 0°.
    let (gx, gy) = if gy < 0 || (gy == 0 && gx < 0) {
        (-gx, -gy)
    } else {
        (gx, gy)
    };
    let bin = if gx > 0 && gy <= gx {
        0
    } else if gx >= 0 {
        1
    } else if gy >= -gx {
        2
    } else {
        3
    };
    Some(bin)
}

/// Sobel magnitude scaled so that an ideal 0-to-255 step edge reads 1.0.
#[inline]
pub fn gradient_magnitude(gx: i32, gy: i32) -> f64 {
    ((gx as f64).powi(2) + (gy as f64).powi(2)).sqrt() / (4.0 * 255.0)
}

/// One summed-area table per orientation bin over the binned Sobel
/// magnitudes of a page.
#[derive(Debug, Clone)]
pub struct OrientedIntegrals {
    width: u32,
    height: u32,
    planes: [Vec<f64>; ORIENTATION_BINS],
}

impl OrientedIntegrals {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Raw plane of `(w+1) x (h+1)` cumulative sums for one bin.
    pub fn plane(&self, bin: usize) -> &[f64] {
        &self.planes[bin]
    }

    /// Binned magnitude in `[x, x+w) x [y, y+h)`; the caller checks bounds.
    #[inline]
    pub fn rect_sum(&self, bin: usize, x: u32, y: u32, w: u32, h: u32) -> f64 {
        let s = self.width as usize + 1;
        let p = &self.planes[bin];
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        (p[y1 * s + x1] - p[y0 * s + x1]) - (p[y1 * s + x0] - p[y0 * s + x0])
    }

    /// All four bin sums of a rectangle.
    #[inline]
    pub fn rect_bins(&self, x: u32, y: u32, w: u32, h: u32) -> [f64; ORIENTATION_BINS] {
        std::array::from_fn(|b| self.rect_sum(b, x, y, w, h).max(0.0))
    }
}

/// Builds the oriented integrals; magnitudes below `magnitude_floor`
/// contribute nothing.
pub fn oriented_integrals(img: &GrayImage, magnitude_floor: f64) -> OrientedIntegrals {
    let (w, h) = (img.width as usize, img.height as usize);
    let s = w + 1;
    let mut planes: [Vec<f64>; ORIENTATION_BINS] = std::array::from_fn(|_| vec![0.0; s * (h + 1)]);
    let mut row = [0.0f64; ORIENTATION_BINS];
    for y in 0..h {
        row.fill(0.0);
        for x in 0..w {
            let (gx, gy) = sobel_at(img, x as u32, y as u32);
            if let Some(bin) = orientation_bin(gx, gy) {
                let mag = gradient_magnitude(gx, gy);
                if mag >= magnitude_floor {
                    row[bin] += mag;
                }
            }
            let (above, here) = ((y * s) + x + 1, ((y + 1) * s) + x + 1);
            for (plane, acc) in planes.iter_mut().zip(row.iter()) {
                plane[here] = plane[above] + acc;
            }
        }
    }
    OrientedIntegrals {
        width: img.width,
        height: img.height,
        planes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: u32, h: u32, f: impl Fn(u32, u32) -> u8) -> GrayImage {
        let mut img = GrayImage::filled(w, h, 0);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    #[test]
    fn binarize_thresholds() {
        assert!(binarize(&GrayImage::filled(4, 3, 255), 128).data().iter().all(|&b| b));
        assert!(binarize(&GrayImage::filled(4, 3, 0), 128).data().iter().all(|&b| !b));
        let two = GrayImage::new(2, 1, vec![100, 200]).unwrap();
        assert_eq!(binarize(&two, 128).data(), &[false, true]);
        // boundary value counts as white
        let edge = GrayImage::new(1, 1, vec![128]).unwrap();
        assert_eq!(binarize(&edge, 128).data(), &[true]);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn erosion_grows_single_black_pixel() {
        let mut img = BinaryImage::filled(5, 5, true);
        img.set(2, 2, false);
        let out = erode_white(&img, 1, 1);
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&x) && (1..=3).contains(&y);
                assert_eq!(out.is_white(x, y), !inside, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn erosion_fixed_point_on_white() {
        let img = BinaryImage::filled(7, 4, true);
        assert_eq!(erode_white(&img, 2, 3), img);
    }

    #[test]
    fn erosion_iterations_compose_on_convex_shapes() {
        let mut img = BinaryImage::filled(30, 30, true);
        for y in 10..16 {
            for x in 8..20 {
                img.set(x, y, false);
            }
        }
        img.set(25, 3, false);
        assert_eq!(erode_white(&img, 1, 2), erode_white(&img, 2, 1));
    }

    #[test]
    fn labels_separated_rectangles() {
        let mut img = BinaryImage::filled(9, 4, true);
        for y in 0..4 {
            img.set(4, y, false);
        }
        let labels = label_components(&img, Foreground::White);
        assert_eq!(labels.label_count(), 2);
        assert_eq!(labels.get(0, 0), 0);
        assert_eq!(labels.get(8, 3), 1);
        assert_eq!(labels.get(4, 2), LabelImage::BACKGROUND);
    }

    #[test]
    fn all_white_is_one_component() {
        let labels = label_components(&BinaryImage::filled(6, 6, true), Foreground::White);
        assert_eq!(labels.label_count(), 1);
        assert!(labels.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn checkerboard_is_not_diagonally_connected() {
        let (w, h) = (6u32, 6u32);
        let mut img = BinaryImage::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, (x + y) % 2 == 0);
            }
        }
        let labels = label_components(&img, Foreground::White);
        assert_eq!(labels.label_count(), w * h / 2);
        let black = label_components(&img, Foreground::Black);
        assert_eq!(black.label_count(), w * h / 2);
    }

    #[test]
    fn orientation_bins_on_axes_and_diagonals() {
        assert_eq!(orientation_bin(0, 0), None);
        assert_eq!(orientation_bin(5, 0), Some(0));
        assert_eq!(orientation_bin(-5, 0), Some(0)); // 180° folds to 0°
        assert_eq!(orientation_bin(3, 3), Some(0)); // 45° tie goes low
        assert_eq!(orientation_bin(1, 3), Some(1));
        assert_eq!(orientation_bin(0, 4), Some(1)); // 90° tie goes low
        assert_eq!(orientation_bin(0, -4), Some(1));
        assert_eq!(orientation_bin(-3, 3), Some(2)); // 135° tie goes low
        assert_eq!(orientation_bin(-4, 1), Some(3));
        assert_eq!(orientation_bin(4, -1), Some(3)); // -14° is 166°
    }

    #[test]
    fn constant_image_has_empty_integrals() {
        let ints = oriented_integrals(&GrayImage::filled(12, 9, 77), 0.0);
        for b in 0..ORIENTATION_BINS {
            assert!(ints.plane(b).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vertical_line_lands_in_horizontal_gradient_bin() {
        let img = gray(20, 15, |x, _| if x == 9 { 0 } else { 255 });
        let ints = oriented_integrals(&img, DEFAULT_MAGNITUDE_FLOOR);
        let sums = ints.rect_bins(0, 0, 20, 15);
        assert!(sums[0] > 0.0);
        assert_eq!(&sums[1..], &[0.0, 0.0, 0.0]);
        // The two flanking columns each see a full step, |gx| = 4 * 255.
        let expected = 2.0 * 15.0;
        assert!((sums[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn integral_planes_start_at_zero_and_grow() {
        let img = gray(17, 11, |x, y| ((x * 37 + y * 91) % 256) as u8);
        let ints = oriented_integrals(&img, 0.0);
        let s = 18;
        for b in 0..ORIENTATION_BINS {
            let p = ints.plane(b);
            for y in 0..12 {
                assert_eq!(p[y * s], 0.0);
                for x in 1..18 {
                    assert!(p[y * s + x] >= p[y * s + x - 1]);
                    if y > 0 {
                        assert!(p[y * s + x] >= p[(y - 1) * s + x]);
                    }
                }
            }
            assert!(p[..s].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn count_integral_matches_direct_count() {
        let w = 13u32;
        let set = |i: usize| (i * 7) % 5 < 2;
        let ints = CountIntegral::new(w, 9, set);
        let direct: u32 = (2..7)
            .flat_map(|y| (3..11).map(move |x| (x, y)))
            .map(|(x, y)| u32::from(set((y * w + x) as usize)))
            .sum();
        assert_eq!(ints.rect(3, 2, 8, 5), direct);
    }

    #[test]
    fn crop_checks_bounds() {
        let img = gray(10, 8, |x, y| (x + 10 * y) as u8);
        let c = img.crop(2, 3, 4, 2).unwrap();
        assert_eq!(c.data(), &[32, 33, 34, 35, 42, 43, 44, 45]);
        assert!(matches!(img.crop(8, 0, 3, 1), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn png_round_trip() {
        let img = gray(7, 5, |x, y| (x * 30 + y) as u8);
        assert_eq!(GrayImage::decode(&img.encode_png()).unwrap(), img);
    }
}
