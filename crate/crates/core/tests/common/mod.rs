#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sketchdex_core::engine::PageSource;
use sketchdex_core::proposal::Rect;
use sketchdex_core::raster::GrayImage;
use sketchdex_core::synth::{glyph_page, Glyph, GlyphPageConfig, PanelPage};

pub struct GlyphCorpus {
    pub glyphs: Vec<Glyph>,
    pub pages: Vec<(PageSource, GrayImage)>,
    pub boxes: Vec<Rect>,
}

/// `n` in-memory pages, page `i` showing glyph `i`.
pub fn glyph_corpus(n: usize, seed: u64) -> GlyphCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glyphs: Vec<Glyph> = (0..n).map(|_| Glyph::random(&mut rng)).collect();
    let cfg = GlyphPageConfig::default();
    let mut pages = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for (i, g) in glyphs.iter().enumerate() {
        let p = glyph_page(g, &cfg, &mut rng);
        pages.push((PageSource::new(format!("mem/page{i}.png"), format!("title{}", i / 10)), p.image));
        boxes.push(p.glyph_box);
    }
    GlyphCorpus { glyphs, pages, boxes }
}

/// Hand-built margin of a panel page: everything farther than `reach`
/// (Chebyshev) from every frame rectangle and margin mark.
pub fn margin_oracle(page: &PanelPage, reach: u32) -> Vec<bool> {
    let (w, h) = (page.image.width(), page.image.height());
    let mut out = vec![true; (w * h) as usize];
    for r in page.frames.iter().chain(&page.marks) {
        let x0 = r.x.saturating_sub(reach);
        let y0 = r.y.saturating_sub(reach);
        let x1 = (r.right() + reach).min(w);
        let y1 = (r.bottom() + reach).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                out[(y * w + x) as usize] = false;
            }
        }
    }
    out
}

/// Layout of an index file read without the library's loader.
pub struct RawIndex {
    pub subspaces: usize,
    pub pages: Vec<RawPage>,
    pub end: usize,
}

pub struct RawPage {
    pub page_id: u32,
    pub windows: Vec<[u32; 4]>,
    pub code_range: std::ops::Range<usize>,
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn parse_index_file(b: &[u8]) -> RawIndex {
    assert_eq!(&b[0..4], b"SKDX");
    assert_eq!(u32_at(b, 4), 1);
    let config_len = u32_at(b, 8) as usize;
    let mut at = 12 + config_len;
    assert_eq!(&b[at..at + 4], b"PQCB");
    let m = u32_at(b, at + 8) as usize;
    let k = u32_at(b, at + 12) as usize;
    let d = u32_at(b, at + 16) as usize;
    at += 4 + 4 + 12 + 8 + m * k * (d / m) * 4;
    let n_pages = u32_at(b, at) as usize;
    at += 4;
    let mut pages = Vec::new();
    for _ in 0..n_pages {
        let page_id = u32_at(b, at);
        at += 12;
        for _ in 0..2 {
            let len = u32_at(b, at) as usize;
            at += 4 + len;
        }
        let n = u32_at(b, at) as usize;
        at += 4;
        let windows = (0..n)
            .map(|i| {
                let o = at + 16 * i;
                [u32_at(b, o), u32_at(b, o + 4), u32_at(b, o + 8), u32_at(b, o + 12)]
            })
            .collect();
        at += 16 * n;
        pages.push(RawPage {
            page_id,
            windows,
            code_range: at..at + m * n,
        });
        at += m * n;
    }
    RawIndex {
        subspaces: m,
        pages,
        end: at,
    }
}

/// Small configuration for quick builds.
pub fn quick_config() -> sketchdex_core::engine::IndexConfig {
    sketchdex_core::engine::IndexConfig {
        centroids: 32,
        kmeans_iters: 10,
        ..Default::default()
    }
}
