//! Offline indexing and query-time search.
//!
//! Each page goes through margin labeling, window proposal, EOH description
//! and PQ encoding. One codebook is trained on features from a seeded subset
//! of pages. A query scans every page's codes; by default only the best
//! window of each page is kept and pages are ranked by it.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::eoh::{dimension, extract_at, sketch_to_feature, EohFeature, PageFeatures, DEFAULT_CELLS};
use crate::error::{Error, Result};
use crate::margin::{compute_margin_mask, MarginConfig, MarginMask};
use crate::pq::{self, adc_scan, AdcTable, CodeArray, PqCodebook};
use crate::proposal::{page_windows, ProposalConfig, Rect, Window};
use crate::raster::{check_rect, oriented_integrals, GrayImage, DEFAULT_MAGNITUDE_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    /// EOH cells per window side; features have `4 * cells^2` dimensions.
    pub cells: u32,
    /// PQ subspaces `M`.
    pub subspaces: usize,
    /// Centroids per subspace `K`.
    pub centroids: usize,
    /// Smallest window side kept.
    pub min_side: u32,
    pub margin: MarginConfig,
    pub proposal: ProposalConfig,
    pub magnitude_floor: f64,
    pub seed: u64,
    /// Fraction of pages whose features train the codebook.
    pub holdout_fraction: f64,
    /// Training features are subsampled to at most this many.
    pub max_train_samples: usize,
    pub kmeans_iters: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            cells: DEFAULT_CELLS,
            subspaces: pq::DEFAULT_SUBSPACES,
            centroids: pq::DEFAULT_CENTROIDS,
            min_side: 100,
            margin: MarginConfig::default(),
            proposal: ProposalConfig::default(),
            magnitude_floor: DEFAULT_MAGNITUDE_FLOOR,
            seed: 0,
            holdout_fraction: 0.25,
            max_train_samples: 20_000,
            kmeans_iters: pq::DEFAULT_KMEANS_ITERS,
        }
    }
}

impl IndexConfig {
    pub fn dim(&self) -> usize {
        dimension(self.cells)
    }

    pub fn margin_threshold(&self) -> f64 {
        self.margin.threshold
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.cells == 0 || self.cells > 64 {
            return bad(format!("cells = {} outside 1..=64", self.cells));
        }
        if self.subspaces == 0 || !self.dim().is_multiple_of(self.subspaces) {
            return bad(format!(
                "M = {} must divide the feature dimension {}",
                self.subspaces,
                self.dim()
            ));
        }
        if self.centroids == 0 || self.centroids > 256 {
            return bad(format!("K = {} outside 1..=256", self.centroids));
        }
        if self.min_side == 0 {
            return bad("min_side must be >= 1".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction <= 1.0) {
            return bad(format!("holdout fraction {} outside (0, 1]", self.holdout_fraction));
        }
        if self.max_train_samples == 0 {
            return bad("max_train_samples must be >= 1".into());
        }
        self.margin.validate()?;
        self.proposal.validate()
    }

    /// Proposal settings for one page: a per-page seed, and no box dropped
    /// that could still yield a window of `min_side`.
    pub fn page_proposal_config(&self, page_id: u32) -> ProposalConfig {
        ProposalConfig {
            seed: self.seed ^ (page_id as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93),
            min_size: self.proposal.min_size.min(self.min_side),
            ..self.proposal.clone()
        }
    }
}

/// A page to index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageSource {
    pub path: PathBuf,
    pub title_id: String,
}

impl PageSource {
    pub fn new(path: impl Into<PathBuf>, title_id: impl Into<String>) -> Self {
        PageSource {
            path: path.into(),
            title_id: title_id.into(),
        }
    }
}

/// Quantized windows of one page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageRecord {
    pub page_id: u32,
    pub title_id: String,
    pub source: String,
    pub width: u32,
    pub height: u32,
    pub windows: Vec<Window>,
    pub codes: CodeArray,
}

impl PageRecord {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub config: IndexConfig,
    pub codebook: PqCodebook,
    pub pages: Vec<PageRecord>,
}

/// Byte counts of an index held in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryReport {
    pub pages: usize,
    pub windows: usize,
    /// `sum_p M * N_p`
    pub code_bytes: usize,
    pub codebook_bytes: usize,
    /// Four u32 per window.
    pub geometry_bytes: usize,
    pub total_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub page_id: u32,
    pub window: Window,
    /// Squared ADC distance.
    pub distance: f32,
}

/// Whether a search keeps one hit per page or raw window-level results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HitMode {
    #[default]
    BestPerPage,
    Windows,
}

/// Features of one page before quantization.
#[derive(Debug, Clone)]
pub struct PageAnalysis {
    pub features: PageFeatures,
    pub mask: MarginMask,
    pub degenerate: bool,
    pub proposals: usize,
}

/// Margin mask, windows and EOH features of a page.
pub fn analyze_page(page_id: u32, page: &GrayImage, cfg: &IndexConfig) -> Result<PageAnalysis> {
    let (mask, degenerate) = match compute_margin_mask(page, &cfg.margin) {
        Ok(mask) => (mask, false),
        Err(d) => (d.mask, true),
    };
    let windows = page_windows(
        page_id,
        page,
        &mask,
        &cfg.page_proposal_config(page_id),
        cfg.min_side,
        cfg.margin.threshold,
    );
    let integrals = oriented_integrals(page, cfg.magnitude_floor);
    let features = PageFeatures::describe(page_id, &integrals, &windows, cfg.cells)?;
    Ok(PageAnalysis {
        proposals: windows.len(),
        features,
        mask,
        degenerate,
    })
}

/// Result of an index build, with the pages that could not be read.
#[derive(Debug)]
pub struct BuildOutcome {
    pub index: Index,
    pub failures: Vec<(PathBuf, Error)>,
}

/// Reads and indexes every page. Unreadable pages are reported and skipped;
/// the build fails only if none can be read.
pub fn build_index(pages: &[PageSource], cfg: &IndexConfig) -> Result<BuildOutcome> {
    cfg.validate()?;
    let loaded: Vec<(usize, Result<GrayImage>)> = pages
        .par_iter()
        .enumerate()
        .map(|(i, p)| (i, GrayImage::open(&p.path)))
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (i, res) in loaded {
        match res {
            Ok(img) => ok.push((pages[i].clone(), img)),
            Err(e) => {
                warn!(path = %pages[i].path.display(), error = %e, "skipping page");
                failures.push((pages[i].path.clone(), e));
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::NoPages {
            failures: failures.len(),
        });
    }
    let index = build_from_rasters(ok, cfg)?;
    Ok(BuildOutcome { index, failures })
}

/// Indexes already decoded pages; page ids follow input order.
pub fn build_from_rasters(pages: Vec<(PageSource, GrayImage)>, cfg: &IndexConfig) -> Result<Index> {
    cfg.validate()?;
    if pages.is_empty() {
        return Err(Error::NoPages { failures: 0 });
    }
    let analyses: Vec<PageAnalysis> = pages
        .par_iter()
        .enumerate()
        .map(|(i, (_, img))| analyze_page(i as u32, img, cfg))
        .collect::<Result<_>>()?;
    for (i, a) in analyses.iter().enumerate() {
        if a.degenerate {
            warn!(page = i, "no white area after erosion; margin skipping disabled");
        }
        debug!(page = i, windows = a.features.len(), "described page");
    }

    let codebook = train_codebook(&analyses, cfg)?;
    let records = pages
        .into_par_iter()
        .zip(analyses)
        .enumerate()
        .map(|(i, ((src, img), analysis))| {
            let mut codes = CodeArray::new(cfg.subspaces);
            for f in &analysis.features.features {
                codes.push(&codebook.encode(f.values())?);
            }
            Ok(PageRecord {
                page_id: i as u32,
                title_id: src.title_id,
                source: src.path.to_string_lossy().into_owned(),
                width: img.width(),
                height: img.height(),
                windows: analysis.features.windows,
                codes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Index {
        config: cfg.clone(),
        codebook,
        pages: records,
    })
}

/// Trains the codebook on features of the holdout pages (all pages when the
/// holdout has fewer than `K` features). With fewer than `K` samples overall
/// the trained centroids are repeated to fill the codebook; encoding never
/// selects the repeats because ties go to the lowest index.
fn train_codebook(analyses: &[PageAnalysis], cfg: &IndexConfig) -> Result<PqCodebook> {
    let (m, k, dim) = (cfg.subspaces, cfg.centroids, cfg.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..analyses.len()).collect();
    order.shuffle(&mut rng);
    let holdout_pages = ((analyses.len() as f64 * cfg.holdout_fraction).ceil() as usize).clamp(1, analyses.len());
    let collect = |pages: &[usize]| -> Vec<&[f32]> {
        let mut sorted = pages.to_vec();
        sorted.sort_unstable();
        sorted
            .iter()
            .flat_map(|&p| analyses[p].features.features.iter().map(|f| f.values()))
            .collect()
    };
    let mut samples = collect(&order[..holdout_pages]);
    if samples.len() < k {
        samples = collect(&order);
    }
    if samples.len() > cfg.max_train_samples {
        let mut picked = sample(&mut rng, samples.len(), cfg.max_train_samples).into_vec();
        picked.sort_unstable();
        samples = picked.into_iter().map(|i| samples[i]).collect();
    }
    debug!(samples = samples.len(), "training codebook");
    if samples.is_empty() {
        return PqCodebook::from_centroids(m, k, dim, cfg.seed, vec![0.0; k * dim]);
    }
    let k_eff = k.min(samples.len());
    let trained = pq::train(&samples, m, k_eff, cfg.kmeans_iters, cfg.seed)?;
    if k_eff == k {
        return Ok(trained);
    }
    let ds = dim / m;
    let mut centroids = Vec::with_capacity(k * dim);
    for sub in 0..m {
        for j in 0..k {
            centroids.extend_from_slice(trained.centroid(sub, j % k_eff));
        }
    }
    debug_assert_eq!(centroids.len(), k * m * ds);
    PqCodebook::from_centroids(m, k, dim, cfg.seed, centroids)
}

impl Index {
    pub fn page(&self, page_id: u32) -> Result<&PageRecord> {
        self.pages
            .get(page_id as usize)
            .ok_or(Error::PageNotFound(page_id))
    }

    pub fn window_count(&self) -> usize {
        self.pages.iter().map(|p| p.len()).sum()
    }

    pub fn memory_report(&self) -> MemoryReport {
        let windows = self.window_count();
        let code_bytes: usize = self.pages.iter().map(|p| p.codes.as_bytes().len()).sum();
        let codebook_bytes = self.codebook.raw_centroids().len() * 4;
        let geometry_bytes = windows * 16;
        MemoryReport {
            pages: self.pages.len(),
            windows,
            code_bytes,
            codebook_bytes,
            geometry_bytes,
            total_bytes: code_bytes + codebook_bytes + geometry_bytes,
        }
    }

    /// Decodes the stored raster of a page.
    pub fn load_page(&self, page_id: u32) -> Result<GrayImage> {
        let rec = self.page(page_id)?;
        let img = GrayImage::open(Path::new(&rec.source))?;
        if img.width() != rec.width || img.height() != rec.height {
            return Err(Error::Decode(format!(
                "{} is {}x{}, indexed as {}x{}",
                rec.source,
                img.width(),
                img.height(),
                rec.width,
                rec.height
            )));
        }
        Ok(img)
    }

    fn table_for(&self, y: &[f32]) -> Result<AdcTable> {
        if self.pages.is_empty() {
            return Err(Error::EmptyIndex);
        }
        self.codebook.adc_table(y)
    }

    /// Best window per page, pages ranked by it; ties go to the lower page id.
    pub fn search(&self, y: &EohFeature, k: usize) -> Result<Vec<SearchHit>> {
        self.search_vector(y.values(), k, HitMode::BestPerPage)
    }

    /// Top `k` windows over the whole corpus, ties by page then position.
    pub fn search_windows(&self, y: &EohFeature, k: usize) -> Result<Vec<SearchHit>> {
        self.search_vector(y.values(), k, HitMode::Windows)
    }

    pub fn search_vector(&self, y: &[f32], k: usize, mode: HitMode) -> Result<Vec<SearchHit>> {
        let table = self.table_for(y)?;
        let per_page = match mode {
            HitMode::BestPerPage => 1,
            HitMode::Windows => k,
        };
        let mut hits: Vec<(SearchHit, usize)> = self
            .pages
            .par_iter()
            .flat_map_iter(|page| {
                adc_scan(&table, &page.codes, per_page)
                    .into_iter()
                    .map(move |n| {
                        let hit = SearchHit {
                            page_id: page.page_id,
                            window: page.windows[n.index],
                            distance: n.distance,
                        };
                        (hit, n.index)
                    })
            })
            .collect();
        hits.sort_by(|(a, ia), (b, ib)| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.page_id.cmp(&b.page_id))
                .then(ia.cmp(ib))
        });
        hits.truncate(k);
        Ok(hits.into_iter().map(|(h, _)| h).collect())
    }

    /// Searches with a sketch raster.
    pub fn query_sketch(&self, canvas: &GrayImage, k: usize, mode: HitMode) -> Result<Vec<SearchHit>> {
        let feature = sketch_to_feature(canvas, self.config.cells, self.config.magnitude_floor)?
            .ok_or(Error::BlankQuery)?;
        self.search_vector(feature.values(), k, mode)
    }

    /// Relevance feedback: re-query with a region of an indexed page.
    pub fn region_query(&self, page_id: u32, rect: Rect, k: usize, mode: HitMode) -> Result<Vec<SearchHit>> {
        let page = self.load_page(page_id)?;
        self.region_query_on(&page, rect, k, mode)
    }

    /// As [`Index::region_query`] with the page raster already at hand.
    pub fn region_query_on(&self, page: &GrayImage, rect: Rect, k: usize, mode: HitMode) -> Result<Vec<SearchHit>> {
        let feature = region_feature(page, rect, self.config.cells, self.config.magnitude_floor)?
            .ok_or(Error::BlankRegion)?;
        self.search_vector(feature.values(), k, mode)
    }
}

/// Square around `rect` (grown along its shorter side, centered, shifted
/// into the page) as `(x, y, side)`.
pub fn snap_to_square(rect: Rect, page_w: u32, page_h: u32) -> Result<(u32, u32, u32)> {
    check_rect(rect.x, rect.y, rect.w, rect.h, page_w, page_h)?;
    let side = rect.w.max(rect.h).min(page_w).min(page_h);
    let place = |start: i64, limit: u32| start.clamp(0, (limit - side) as i64) as u32;
    let x = place(rect.x as i64 + (rect.w as i64 - side as i64) / 2, page_w);
    let y = place(rect.y as i64 + (rect.h as i64 - side as i64) / 2, page_h);
    Ok((x, y, side))
}

/// EOH of the square around `rect` on a full page raster.
///
/// Only the square plus a one-pixel ring is filtered; Sobel needs nothing
/// further, so the result equals extraction from whole-page integrals.
pub fn region_feature(page: &GrayImage, rect: Rect, cells: u32, magnitude_floor: f64) -> Result<Option<EohFeature>> {
    let (x, y, side) = snap_to_square(rect, page.width(), page.height())?;
    let x0 = x.saturating_sub(1);
    let y0 = y.saturating_sub(1);
    let x1 = (x + side + 1).min(page.width());
    let y1 = (y + side + 1).min(page.height());
    let crop = page.crop(x0, y0, x1 - x0, y1 - y0)?;
    let integrals = oriented_integrals(&crop, magnitude_floor);
    extract_at(&integrals, x - x0, y - y0, side, cells)
}
