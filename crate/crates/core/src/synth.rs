//! Synthetic line-art pages with known content, for demos and testing.
//!
//! A glyph is a connected set of random-walk polylines. Glyph pages hold one
//! glyph inside a framed panel; panel pages tile frames separated by gutters
//! so their margin is known by construction.

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::proposal::Rect;
use crate::raster::GrayImage;

/// Aspect ratios beyond this are stretched back when a glyph is generated.
const MAX_GLYPH_ASPECT: f64 = 1.4;

/// Polylines in the unit square; every stroke starts on an earlier one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Glyph {
    pub strokes: Vec<Vec<(f64, f64)>>,
}

impl Glyph {
    pub fn random(rng: &mut impl Rng) -> Glyph {
        let mut strokes: Vec<Vec<(f64, f64)>> = Vec::new();
        for s in 0..rng.gen_range(2..=4) {
            let start = if s == 0 {
                (rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7))
            } else {
                let prev: Vec<(f64, f64)> = strokes.iter().flatten().copied().collect();
                prev[rng.gen_range(0..prev.len())]
            };
            let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut pts = vec![start];
            for _ in 0..rng.gen_range(3..=6) {
                heading += rng.gen_range(-1.6..1.6);
                let step = rng.gen_range(0.15..0.35);
                let (x, y) = *pts.last().expect("non-empty");
                pts.push((x + step * heading.cos(), y + step * heading.sin()));
            }
            strokes.push(pts);
        }
        let mut g = Glyph { strokes };
        g.normalize();
        g
    }

    /// Scales into the unit square, long side 1, centered, aspect bounded.
    fn normalize(&mut self) {
        let pts = || self.strokes.iter().flatten();
        let (x0, x1) = pts().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (y0, y1) = pts().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let (mut w, mut h) = ((x1 - x0).max(1e-3), (y1 - y0).max(1e-3));
        let long = w.max(h);
        let (w_min, h_min) = if w >= h {
            (w, h.max(long / MAX_GLYPH_ASPECT))
        } else {
            (w.max(long / MAX_GLYPH_ASPECT), h)
        };
        let (sx, sy) = (w_min / w / long, h_min / h / long);
        w = w_min / long;
        h = h_min / long;
        for p in self.strokes.iter_mut().flatten() {
            p.0 = (p.0 - x0) * sx + (1.0 - w) / 2.0;
            p.1 = (p.1 - y0) * sy + (1.0 - h) / 2.0;
        }
    }

    /// Draws the glyph into the square `(x, y, size)` and returns the bounding
    /// box of the drawn ink.
    pub fn render(&self, img: &mut GrayImage, x: f64, y: f64, size: f64, width: f64) -> Rect {
        let mut ink = InkBox::default();
        for stroke in &self.strokes {
            for seg in stroke.windows(2) {
                let a = (x + seg[0].0 * size, y + seg[0].1 * size);
                let b = (x + seg[1].0 * size, y + seg[1].1 * size);
                draw_segment(img, a, b, width / 2.0, &mut ink);
            }
        }
        ink.rect()
    }
}

/// Stroke width used for a glyph drawn at `size`.
pub fn stroke_width(size: f64) -> f64 {
    (size / 45.0).max(2.0)
}

#[derive(Default)]
struct InkBox(Option<(u32, u32, u32, u32)>);

impl InkBox {
    fn add(&mut self, x: u32, y: u32) {
        self.0 = Some(match self.0 {
            None => (x, y, x, y),
            Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
        });
    }

    fn rect(&self) -> Rect {
        match self.0 {
            None => Rect::new(0, 0, 0, 0),
            Some((a, b, c, d)) => Rect::new(a, b, c - a + 1, d - b + 1),
        }
    }
}

/// Black round-capped segment of radius `r`.
fn draw_segment(img: &mut GrayImage, a: (f64, f64), b: (f64, f64), r: f64, ink: &mut InkBox) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let lo_x = (a.0.min(b.0) - r).floor().max(0.0) as u32;
    let lo_y = (a.1.min(b.1) - r).floor().max(0.0) as u32;
    let hi_x = (a.0.max(b.0) + r).ceil().min(w - 1.0).max(0.0) as u32;
    let hi_y = (a.1.max(b.1) + r).ceil().min(h - 1.0).max(0.0) as u32;
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for py in lo_y..=hi_y {
        for px in lo_x..=hi_x {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((cx - a.0) * dx + (cy - a.1) * dy) / len2).clamp(0.0, 1.0)
            };
            let (qx, qy) = (a.0 + t * dx - cx, a.1 + t * dy - cy);
            if qx * qx + qy * qy <= r * r {
                img.set(px, py, 0);
                ink.add(px, py);
            }
        }
    }
}

/// Outline of `r` drawn `thickness` pixels thick, inward.
pub fn draw_frame(img: &mut GrayImage, r: Rect, thickness: u32) {
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            let inner = x >= r.x + thickness
                && x + thickness < r.right()
                && y >= r.y + thickness
                && y + thickness < r.bottom();
            if !inner {
                img.set(x, y, 0);
            }
        }
    }
}

pub fn fill_rect(img: &mut GrayImage, r: Rect, value: u8) {
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            img.set(x, y, value);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphPageConfig {
    pub width: u32,
    pub height: u32,
    pub frame_inset: u32,
    pub frame_thickness: u32,
    pub glyph_min: u32,
    pub glyph_max: u32,
}

impl Default for GlyphPageConfig {
    fn default() -> Self {
        GlyphPageConfig {
            width: 320,
            height: 320,
            frame_inset: 8,
            frame_thickness: 3,
            glyph_min: 120,
            glyph_max: 170,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlyphPage {
    pub image: GrayImage,
    /// Ink bounding box of the glyph.
    pub glyph_box: Rect,
}

/// One framed panel with `glyph` at a random size and position inside.
pub fn glyph_page(glyph: &Glyph, cfg: &GlyphPageConfig, rng: &mut impl Rng) -> GlyphPage {
    let mut image = GrayImage::filled(cfg.width, cfg.height, 255);
    let frame = Rect::new(
        cfg.frame_inset,
        cfg.frame_inset,
        cfg.width - 2 * cfg.frame_inset,
        cfg.height - 2 * cfg.frame_inset,
    );
    draw_frame(&mut image, frame, cfg.frame_thickness);
    let pad = cfg.frame_inset + cfg.frame_thickness + 6;
    let room = cfg.width.min(cfg.height) - 2 * pad;
    let size = rng.gen_range(cfg.glyph_min..=cfg.glyph_max.max(cfg.glyph_min)).min(room);
    let x = rng.gen_range(pad..=cfg.width - pad - size) as f64;
    let y = rng.gen_range(pad..=cfg.height - pad - size) as f64;
    let size = size as f64;
    let glyph_box = glyph.render(&mut image, x, y, size, stroke_width(size));
    GlyphPage { image, glyph_box }
}

/// Clean sketch of `glyph`, `size` pixels across, centered on a white canvas.
pub fn query_canvas(glyph: &Glyph, canvas: u32, size: u32) -> GrayImage {
    let mut image = GrayImage::filled(canvas, canvas, 255);
    let off = (canvas.saturating_sub(size)) as f64 / 2.0;
    glyph.render(&mut image, off, off, size as f64, stroke_width(size as f64));
    image
}

/// A comic-style page: a grid of framed panels separated by white gutters,
/// some with a short gap in their border, plus small marks in the margin.
#[derive(Debug, Clone)]
pub struct PanelPage {
    pub image: GrayImage,
    pub frames: Vec<Rect>,
    /// Ink box of the glyph in each panel.
    pub glyphs: Vec<Rect>,
    /// Marks drawn in the margin (page numbers and the like).
    pub marks: Vec<Rect>,
    pub frame_thickness: u32,
}

pub fn panel_page(width: u32, height: u32, rng: &mut impl Rng) -> PanelPage {
    let mut image = GrayImage::filled(width, height, 255);
    let thickness = rng.gen_range(2..=4);
    let outer = rng.gen_range(14..=24);
    let gutter = rng.gen_range(10..=18);
    let rows = rng.gen_range(2..=3u32);
    let mut frames = Vec::new();
    let mut glyphs = Vec::new();
    let row_h = (height - 2 * outer - (rows - 1) * gutter) / rows;
    for r in 0..rows {
        let cols = rng.gen_range(1..=3u32);
        let col_w = (width - 2 * outer - (cols - 1) * gutter) / cols;
        for c in 0..cols {
            frames.push(Rect::new(
                outer + c * (col_w + gutter),
                outer + r * (row_h + gutter),
                col_w,
                row_h,
            ));
        }
    }
    for f in &frames {
        draw_frame(&mut image, *f, thickness);
        // content: a glyph and some hatching inside the panel
        let side = (f.w.min(f.h) as f64 * 0.6).max(20.0);
        let g = Glyph::random(rng);
        let gx = f.x as f64 + (f.w as f64 - side) / 2.0;
        let gy = f.y as f64 + (f.h as f64 - side) / 2.0;
        glyphs.push(g.render(&mut image, gx, gy, side, stroke_width(side)));
        if rng.gen_bool(0.4) {
            // gap narrow enough for erosion to close
            let gap = rng.gen_range(1..=3);
            let at = f.x + f.w / 3;
            fill_rect(&mut image, Rect::new(at, f.y, gap, thickness), 255);
        }
    }
    let mut marks = Vec::new();
    let mark = Rect::new(width / 2 - 3, height - outer / 2 - 2, 6, 4);
    fill_rect(&mut image, mark, 0);
    marks.push(mark);
    PanelPage {
        image,
        frames,
        glyphs,
        marks,
        frame_thickness: thickness,
    }
}

/// Files written by [`write_glyph_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub pages: Vec<std::path::PathBuf>,
    pub queries: Vec<std::path::PathBuf>,
    pub ground_truth: Vec<GroundTruth>,
}

/// Writes `pages` glyph pages under `dir/pages`, one clean query per label
/// under `dir/queries` (named `<label>__query.png`) and `dir/gt.json`.
/// Page `i` shows glyph `i % labels`.
pub fn write_glyph_corpus(dir: &Path, pages: usize, labels: usize, seed: u64) -> Result<CorpusManifest> {
    use rand::SeedableRng;
    if labels == 0 || pages == 0 {
        return Err(Error::InvalidParameter("pages and labels must be >= 1".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let glyphs: Vec<Glyph> = (0..labels).map(|_| Glyph::random(&mut rng)).collect();
    let page_dir = dir.join("pages");
    let query_dir = dir.join("queries");
    for d in [&page_dir, &query_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let cfg = GlyphPageConfig::default();
    let mut manifest = CorpusManifest {
        pages: Vec::new(),
        queries: Vec::new(),
        ground_truth: Vec::new(),
    };
    for i in 0..pages {
        let label = format!("glyph{:03}", i % labels);
        let page = glyph_page(&glyphs[i % labels], &cfg, &mut rng);
        let path = page_dir.join(format!("page{i:05}.png"));
        page.image.save_png(&path)?;
        manifest.pages.push(path);
        manifest.ground_truth.push(GroundTruth {
            page_id: i as u32,
            label,
            boxes: vec![page.glyph_box],
        });
    }
    for (l, g) in glyphs.iter().enumerate() {
        let path = query_dir.join(format!("glyph{l:03}__query.png"));
        query_canvas(g, 256, 200).save_png(&path)?;
        manifest.queries.push(path);
    }
    let gt_path = dir.join("gt.json");
    let json = serde_json::to_vec_pretty(&manifest.ground_truth)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    std::fs::write(&gt_path, json).map_err(|e| Error::io(&gt_path, e))?;
    Ok(manifest)
}
