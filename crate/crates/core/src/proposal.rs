//! Square window proposals for a page.
//!
//! Candidate boxes come from a grayscale selective-search variant: the page
//! is over-segmented, then adjacent regions are greedily merged by a
//! size/fill/texture similarity and every region's bounding box is emitted.
//! Boxes are then made square and filtered by size and margin coverage.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin::{margin_ratio, MarginMask};
use crate::raster::{GrayImage, LabelImage};
use crate::segment::{felzenszwalb, gaussian_blur};

/// Axis-aligned rectangle in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        Rect {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }

    pub fn intersection_area(&self, other: &Rect) -> u64 {
        let w = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let h = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        w as u64 * h as u64
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn fits_in(&self, page_w: u32, page_h: u32) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= page_w && self.bottom() <= page_h
    }
}

/// Square region of interest on an indexed page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub page_id: u32,
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl Window {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.side, self.side)
    }

    pub fn margin_ratio(&self, mask: &MarginMask) -> Result<f64> {
        margin_ratio(mask, self.x, self.y, self.side)
    }
}

impl Ord for Window {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.page_id, self.y, self.x, self.side).cmp(&(other.page_id, other.y, other.x, other.side))
    }
}

impl PartialOrd for Window {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    /// Pre-segmentation blur.
    pub sigma: f32,
    /// Segmentation granularity `k` of the first pass.
    pub k: f32,
    /// Regions below this many pixels are absorbed by a neighbor.
    pub min_region: u32,
    /// Hard cap on emitted boxes.
    pub max_proposals: usize,
    /// Extra passes with `k` halved each time are run while fewer than this
    /// many boxes have been found.
    pub min_yield: usize,
    /// Total number of segmentation passes allowed.
    pub sweep_passes: u32,
    /// Boxes whose longer side is below this are dropped.
    pub min_size: u32,
    /// Boxes up to this aspect ratio become one square.
    pub aspect_limit: f64,
    /// Overlap between consecutive squares cut from an elongated box.
    pub overlap: f64,
    /// Seeds the randomized proposal ranking.
    pub seed: u64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            sigma: 0.8,
            k: 300.0,
            min_region: 50,
            max_proposals: 1000,
            min_yield: 600,
            sweep_passes: 3,
            min_size: 100,
            aspect_limit: 1.5,
            overlap: 0.5,
            seed: 0,
        }
    }
}

impl ProposalConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if !(self.k > 0.0) {
            return bad("segmentation k must be positive");
        }
        if self.max_proposals == 0 || self.sweep_passes == 0 {
            return bad("max_proposals and sweep_passes must be >= 1");
        }
        if !(self.aspect_limit >= 1.0) {
            return bad("aspect_limit must be >= 1");
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1)");
        }
        Ok(())
    }
}

const ORIENTATIONS: usize = 8;
const MAGNITUDE_BINS: usize = 10;
const TEXTURE_BINS: usize = ORIENTATIONS * MAGNITUDE_BINS;

struct Region {
    size: u64,
    rect: Rect,
    texture: Vec<f32>,
    alive: bool,
    #[cfg_attr(not(test), allow(dead_code))]
    parents: Option<(usize, usize)>,
}

#[derive(PartialEq)]
struct Candidate {
    sim: f32,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-pixel texture bin: 8 gradient directions times 10 magnitude levels.
fn texture_bins(plane: &[f32], w: usize, h: usize) -> Vec<u8> {
    let at = |x: usize, y: usize| plane[y * w + x];
    let mut grads = Vec::with_capacity(w * h);
    let mut max_mag = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            let gx = at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y);
            let gy = at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1));
            let mag = (gx * gx + gy * gy).sqrt();
            max_mag = max_mag.max(mag);
            grads.push((gx, gy, mag));
        }
    }
    grads
        .into_iter()
        .map(|(gx, gy, mag)| {
            let angle = gy.atan2(gx).rem_euclid(std::f32::consts::TAU);
            let o = ((angle / std::f32::consts::TAU * ORIENTATIONS as f32) as usize).min(ORIENTATIONS - 1);
            let m = if max_mag > 0.0 {
                ((mag / max_mag * MAGNITUDE_BINS as f32) as usize).min(MAGNITUDE_BINS - 1)
            } else {
                0
            };
            (o * MAGNITUDE_BINS + m) as u8
        })
        .collect()
}

fn initial_regions(labels: &LabelImage, tex: &[u8]) -> (Vec<Region>, BTreeSet<(usize, usize)>) {
    let (w, h) = (labels.width() as usize, labels.height() as usize);
    let n = labels.label_count() as usize;
    let mut bounds = vec![(u32::MAX, u32::MAX, 0u32, 0u32); n];
    let mut sizes = vec![0u64; n];
    let mut hist = vec![0f32; n * TEXTURE_BINS];
    let mut adjacent = BTreeSet::new();
    let l = labels.labels();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let r = l[i] as usize;
            sizes[r] += 1;
            let b = &mut bounds[r];
            b.0 = b.0.min(x as u32);
            b.1 = b.1.min(y as u32);
            b.2 = b.2.max(x as u32);
            b.3 = b.3.max(y as u32);
            hist[r * TEXTURE_BINS + tex[i] as usize] += 1.0;
            if x + 1 < w && l[i + 1] as usize != r {
                let s = l[i + 1] as usize;
                adjacent.insert((r.min(s), r.max(s)));
            }
            if y + 1 < h && l[i + w] as usize != r {
                let s = l[i + w] as usize;
                adjacent.insert((r.min(s), r.max(s)));
            }
        }
    }
    let regions = (0..n)
        .map(|r| {
            let (x0, y0, x1, y1) = bounds[r];
            let size = sizes[r];
            let texture = hist[r * TEXTURE_BINS..(r + 1) * TEXTURE_BINS]
                .iter()
                .map(|c| c / size as f32)
                .collect();
            Region {
                size,
                rect: Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
                texture,
                alive: true,
                parents: None,
            }
        })
        .collect();
    (regions, adjacent)
}

fn similarity(a: &Region, b: &Region, image_size: f64) -> f32 {
    let size = 1.0 - (a.size + b.size) as f64 / image_size;
    let bbox = a.rect.union(&b.rect).area() as f64;
    let fill = 1.0 - (bbox - a.size as f64 - b.size as f64) / image_size;
    let texture: f32 = a.texture.iter().zip(&b.texture).map(|(p, q)| p.min(*q)).sum();
    (size + fill) as f32 + texture
}

/// One grouping pass over a segmentation; regions are returned in creation
/// order, initial segments first.
fn group_regions(labels: &LabelImage, tex: &[u8]) -> Vec<Region> {
    let image_size = labels.width() as f64 * labels.height() as f64;
    let (mut regions, adjacent) = initial_regions(labels, tex);
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); regions.len()];
    let mut heap = BinaryHeap::new();
    for &(a, b) in &adjacent {
        neighbors[a].insert(b);
        neighbors[b].insert(a);
        heap.push(Candidate {
            sim: similarity(&regions[a], &regions[b], image_size),
            a,
            b,
        });
    }
    while let Some(Candidate { a, b, .. }) = heap.pop() {
        if !regions[a].alive || !regions[b].alive {
            continue;
        }
        let id = regions.len();
        let (ra, rb) = (&regions[a], &regions[b]);
        let size = ra.size + rb.size;
        let texture = ra
            .texture
            .iter()
            .zip(&rb.texture)
            .map(|(p, q)| (p * ra.size as f32 + q * rb.size as f32) / size as f32)
            .collect();
        let merged = Region {
            size,
            rect: ra.rect.union(&rb.rect),
            texture,
            alive: true,
            parents: Some((a, b)),
        };
        regions[a].alive = false;
        regions[b].alive = false;
        let around: BTreeSet<usize> = neighbors[a]
            .union(&neighbors[b])
            .copied()
            .filter(|&n| n != a && n != b)
            .collect();
        for &n in &around {
            neighbors[n].remove(&a);
            neighbors[n].remove(&b);
            neighbors[n].insert(id);
            heap.push(Candidate {
                sim: similarity(&regions[n], &merged, image_size),
                a: n,
                b: id,
            });
        }
        regions.push(merged);
        neighbors.push(around);
    }
    regions
}

/// Proposes object boxes for a page, best-ranked first.
///
/// Boxes from every segmentation pass are pooled; each gets the score
/// `depth * u` with `u` uniform in `[0, 1)` from the configured seed, so
/// large merged regions tend to rank early while small ones still surface.
/// Duplicates keep their best score and the list is capped at
/// `max_proposals`.
pub fn propose_regions(page: &GrayImage, cfg: &ProposalConfig) -> Vec<Rect> {
    let (w, h) = (page.width(), page.height());
    let blurred = gaussian_blur(page, cfg.sigma);
    let tex = texture_bins(&blurred, w as usize, h as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: HashMap<Rect, f64> = HashMap::new();
    let mut k = cfg.k;
    for _ in 0..cfg.sweep_passes {
        let labels = felzenszwalb(&blurred, w, h, k, cfg.min_region);
        let regions = group_regions(&labels, &tex);
        let total = regions.len();
        for (i, rect) in regions.iter().map(|r| r.rect).enumerate() {
            // depth 1 is the final merge
            let depth = total - i;
            let score = depth as f64 * rng.gen::<f64>();
            if rect.w.max(rect.h) < cfg.min_size {
                continue;
            }
            best.entry(rect)
                .and_modify(|s| *s = s.min(score))
                .or_insert(score);
        }
        if best.len() >= cfg.min_yield {
            break;
        }
        k /= 2.0;
    }
    let mut ranked: Vec<(Rect, f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.max_proposals);
    ranked.into_iter().map(|(r, _)| r).collect()
}

/// Turns a box into square windows.
///
/// Boxes within `aspect_limit` give one square of the longer side centered
/// on the box; elongated boxes are covered by squares of the shorter side
/// stepped along the long axis by `side * (1 - overlap)`, the last square
/// flush with the box end. Squares are shifted (and if needed shrunk) to fit
/// the page.
pub fn squarify(
    page_id: u32,
    b: Rect,
    page_w: u32,
    page_h: u32,
    aspect_limit: f64,
    overlap: f64,
) -> Vec<Window> {
    let long = b.w.max(b.h);
    let short = b.w.min(b.h);
    if short == 0 {
        return Vec::new();
    }
    let place = |start: i64, side: u32, limit: u32| -> u32 {
        start.clamp(0, (limit - side) as i64) as u32
    };
    if long as f64 / short as f64 <= aspect_limit {
        let side = long.min(page_w).min(page_h);
        let x = place(b.x as i64 + (b.w as i64 - side as i64) / 2, side, page_w);
        let y = place(b.y as i64 + (b.h as i64 - side as i64) / 2, side, page_h);
        return vec![Window { page_id, x, y, side }];
    }
    let side = short.min(page_w).min(page_h);
    let stride = ((side as f64 * (1.0 - overlap)).floor() as u32).max(1);
    let mut offsets: Vec<u32> = (0..=long - side).step_by(stride as usize).collect();
    if offsets.last() != Some(&(long - side)) {
        offsets.push(long - side);
    }
    offsets
        .into_iter()
        .map(|off| {
            let (x, y) = if b.w >= b.h {
                (b.x as i64 + off as i64, b.y as i64 + (b.h as i64 - side as i64) / 2)
            } else {
                (b.x as i64 + (b.w as i64 - side as i64) / 2, b.y as i64 + off as i64)
            };
            Window {
                page_id,
                x: place(x, side, page_w),
                y: place(y, side, page_h),
                side,
            }
        })
        .collect()
}

/// Keeps windows that are large enough, inside the page and below the margin
/// threshold. Output is sorted by `(y, x, side)` without duplicates.
pub fn filter_windows(
    windows: impl IntoIterator<Item = Window>,
    mask: &MarginMask,
    min_side: u32,
    margin_threshold: f64,
) -> Vec<Window> {
    let mut kept: Vec<Window> = windows
        .into_iter()
        .filter(|w| w.side >= min_side)
        .filter(|w| matches!(w.margin_ratio(mask), Ok(r) if r < margin_threshold))
        .collect();
    kept.sort();
    kept.dedup();
    kept
}

/// Windows of a page in proposal rank order, filtered like
/// [`filter_windows`]; repeats keep their first position.
pub fn ranked_windows(
    page_id: u32,
    page: &GrayImage,
    mask: &MarginMask,
    cfg: &ProposalConfig,
    min_side: u32,
    margin_threshold: f64,
) -> Vec<Window> {
    let (w, h) = (page.width(), page.height());
    let mut seen = HashSet::new();
    propose_regions(page, cfg)
        .into_iter()
        .flat_map(|b| squarify(page_id, b, w, h, cfg.aspect_limit, cfg.overlap))
        .filter(|w| w.side >= min_side)
        .filter(|w| matches!(w.margin_ratio(mask), Ok(r) if r < margin_threshold))
        .filter(|w| seen.insert(*w))
        .collect()
}

/// Full proposal stage for one page.
pub fn page_windows(
    page_id: u32,
    page: &GrayImage,
    mask: &MarginMask,
    cfg: &ProposalConfig,
    min_side: u32,
    margin_threshold: f64,
) -> Vec<Window> {
    let (w, h) = (page.width(), page.height());
    let squares = propose_regions(page, cfg)
        .into_iter()
        .flat_map(|b| squarify(page_id, b, w, h, cfg.aspect_limit, cfg.overlap));
    filter_windows(squares, mask, min_side, margin_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offsets(ws: &[Window]) -> Vec<u32> {
        ws.iter().map(|w| w.x).collect()
    }

    #[test]
    fn square_box_is_kept() {
        let ws = squarify(0, Rect::new(40, 50, 100, 100), 500, 500, 1.5, 0.5);
        assert_eq!(ws, vec![Window { page_id: 0, x: 40, y: 50, side: 100 }]);
    }

    #[test]
    fn elongated_box_is_tiled() {
        let ws = squarify(3, Rect::new(0, 0, 300, 100), 500, 500, 1.5, 0.5);
        assert_eq!(offsets(&ws), vec![0, 50, 100, 150, 200]);
        assert!(ws.iter().all(|w| w.side == 100 && w.y == 0 && w.page_id == 3));

        let tall = squarify(0, Rect::new(10, 20, 100, 260), 500, 500, 1.5, 0.5);
        let ys: Vec<u32> = tall.iter().map(|w| w.y).collect();
        assert_eq!(ys, vec![20, 70, 120, 170, 180]);
    }

    #[test]
    fn nearly_square_box_grows_to_long_side() {
        let ws = squarify(0, Rect::new(20, 30, 100, 90), 500, 500, 1.5, 0.5);
        assert_eq!(ws, vec![Window { page_id: 0, x: 20, y: 25, side: 100 }]);
    }

    #[test]
    fn squares_are_clamped_to_page() {
        let ws = squarify(0, Rect::new(0, 0, 100, 90), 120, 120, 1.5, 0.5);
        assert_eq!(ws[0].y, 0);
        let ws = squarify(0, Rect::new(0, 10, 150, 110), 200, 120, 1.5, 0.5);
        // shrunk to the page height and kept centered horizontally
        assert_eq!(ws[0], Window { page_id: 0, x: 15, y: 0, side: 120 });
    }

    #[test]
    fn filter_drops_small_and_margin_windows() {
        let mut flags = vec![false; 300 * 300];
        for y in 0..300 {
            for x in 200..300 {
                flags[y * 300 + x] = true;
            }
        }
        let mask = MarginMask::from_mask(300, 300, flags).unwrap();
        let w = |x, y, side| Window { page_id: 0, x, y, side };
        let kept = filter_windows(
            vec![w(0, 0, 99), w(150, 0, 100), w(0, 0, 120), w(0, 0, 120), w(0, 150, 100)],
            &mask,
            100,
            0.1,
        );
        // (150, 0, 100) has U/S = 0.5
        assert_eq!(kept, vec![w(0, 0, 120), w(0, 150, 100)]);
    }

    #[test]
    fn proposals_cover_a_single_blob() {
        let mut page = GrayImage::filled(300, 300, 255);
        for y in 90..210u32 {
            for x in 80..220u32 {
                let d = ((x as f32 - 150.0) / 70.0).powi(2) + ((y as f32 - 150.0) / 60.0).powi(2);
                if d <= 1.0 {
                    page.set(x, y, 30);
                }
            }
        }
        let cfg = ProposalConfig { min_size: 0, ..ProposalConfig::default() };
        let boxes = propose_regions(&page, &cfg);
        assert!(!boxes.is_empty() && boxes.len() <= cfg.max_proposals);
        let truth = Rect::new(80, 90, 141, 121);
        let best_iou = boxes
            .iter()
            .map(|b| {
                let inter = b.intersection_area(&truth) as f64;
                inter / (b.area() as f64 + truth.area() as f64 - inter)
            })
            .fold(0.0f64, f64::max);
        assert!(best_iou > 0.5, "best IoU {best_iou}");
    }

    #[test]
    fn proposal_cap_is_enforced() {
        let mut page = GrayImage::filled(200, 200, 255);
        for y in 0..200u32 {
            for x in 0..200u32 {
                if (x / 7 + y / 9) % 3 == 0 || (x * y) % 13 == 0 {
                    page.set(x, y, 0);
                }
            }
        }
        let cfg = ProposalConfig { max_proposals: 25, min_size: 0, ..ProposalConfig::default() };
        assert_eq!(propose_regions(&page, &cfg).len(), 25);
    }

    #[test]
    fn proposals_are_deterministic() {
        let mut page = GrayImage::filled(160, 120, 255);
        for i in 10..150 {
            page.set(i, (i * 3 / 4).min(119), 0);
            page.set(i, 60, 0);
        }
        let cfg = ProposalConfig { min_size: 0, ..ProposalConfig::default() };
        assert_eq!(propose_regions(&page, &cfg), propose_regions(&page, &cfg));
    }

    #[test]
    fn merged_boxes_contain_their_parents() {
        let mut page = GrayImage::filled(120, 80, 255);
        for y in 10..30 {
            for x in 10..40 {
                page.set(x, y, 0);
            }
        }
        for y in 40..70 {
            for x in 60..100 {
                page.set(x, y, 90);
            }
        }
        let blurred = gaussian_blur(&page, 0.8);
        let labels = felzenszwalb(&blurred, 120, 80, 300.0, 50);
        let tex = texture_bins(&blurred, 120, 80);
        let n = labels.label_count() as usize;
        let regions = group_regions(&labels, &tex);
        assert!(n >= 3);
        assert_eq!(regions.len(), 2 * n - 1);
        assert_eq!(regions.last().unwrap().rect, Rect::new(0, 0, 120, 80));
        for r in &regions[n..] {
            let (a, b) = r.parents.unwrap();
            assert!(r.rect.contains(&regions[a].rect));
            assert!(r.rect.contains(&regions[b].rect));
            assert_eq!(r.size, regions[a].size + regions[b].size);
        }
    }
}
