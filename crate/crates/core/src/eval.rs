//! Evaluation: box overlap, hit judging, recall@k, mAP@k and proposal
//! detection-rate curves, with CSV output.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{HitMode, Index, IndexConfig, SearchHit};
use crate::error::{Error, Result};
use crate::margin::compute_margin_mask;
use crate::proposal::{ranked_windows, Rect};
use crate::raster::GrayImage;

/// A prediction is judged correct above this overlap.
pub const OVERLAP_THRESHOLD: f64 = 0.5;

/// Intersection over union of two boxes; 0 when both are empty.
pub fn overlap_ratio(bp: &Rect, bgt: &Rect) -> f64 {
    let inter = bp.intersection_area(bgt);
    let union = bp.area() + bgt.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Annotated occurrences of one target on one page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub page_id: u32,
    pub label: String,
    pub boxes: Vec<Rect>,
}

/// Reads a JSON array of [`GroundTruth`] records.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&raw)
        .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

/// Checks that every ground-truth box lies on an indexed page.
pub fn validate_ground_truth(gts: &[GroundTruth], index: &Index) -> Result<()> {
    for gt in gts {
        let page = index.page(gt.page_id)?;
        if let Some(b) = gt.boxes.iter().find(|b| b.w == 0 || b.h == 0 || !b.fits_in(page.width, page.height)) {
            return Err(Error::OutOfBounds {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                page_w: page.width,
                page_h: page.height,
            });
        }
    }
    Ok(())
}

/// One ranked prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub page_id: u32,
    pub rect: Rect,
}

impl From<&SearchHit> for Prediction {
    fn from(h: &SearchHit) -> Self {
        Prediction {
            page_id: h.page_id,
            rect: h.window.rect(),
        }
    }
}

/// Correctness of each ranked prediction for one query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Judged {
    pub hits: Vec<bool>,
    pub num_relevant: usize,
}

/// Greedy top-down matching: each prediction takes the unmatched ground
/// truth on its page it overlaps most, provided the overlap exceeds the
/// threshold. Every ground-truth box is credited at most once.
pub fn judge(predictions: &[Prediction], gts: &[&GroundTruth]) -> Judged {
    let boxes: Vec<(u32, Rect)> = gts
        .iter()
        .flat_map(|g| g.boxes.iter().map(move |b| (g.page_id, *b)))
        .collect();
    let mut matched = vec![false; boxes.len()];
    let hits = predictions
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (i, (page, b)) in boxes.iter().enumerate() {
                if matched[i] || *page != p.page_id {
                    continue;
                }
                let r = overlap_ratio(&p.rect, b);
                if r > OVERLAP_THRESHOLD && best.is_none_or(|(_, s)| r > s) {
                    best = Some((i, r));
                }
            }
            match best {
                Some((i, _)) => {
                    matched[i] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    Judged {
        hits,
        num_relevant: boxes.len(),
    }
}

/// Fraction of the ground truths found within the first `k` predictions.
pub fn recall_at_k(j: &Judged, k: usize) -> f64 {
    if j.num_relevant == 0 {
        return 0.0;
    }
    let found = j.hits.iter().take(k).filter(|&&h| h).count();
    found as f64 / j.num_relevant as f64
}

/// Precision at each correct rank within `k`, summed and divided by the
/// number of ground truths.
pub fn average_precision_at_k(j: &Judged, k: usize) -> f64 {
    if j.num_relevant == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, _) in j.hits.iter().take(k).enumerate().filter(|(_, &h)| h) {
        found += 1;
        sum += found as f64 / (rank + 1) as f64;
    }
    sum / j.num_relevant as f64
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn mean_recall_at_k(judged: &[Judged], k: usize) -> f64 {
    mean(judged.iter().map(|j| recall_at_k(j, k)))
}

pub fn map_at_k(judged: &[Judged], k: usize) -> f64 {
    mean(judged.iter().map(|j| average_precision_at_k(j, k)))
}

/// Detection rate per window budget and the area under that curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrCurve {
    pub budgets: Vec<usize>,
    pub rates: Vec<f64>,
    pub auc: f64,
}

/// `proposals[p]` is the ranked proposal list of page `p` and `gts[p]` its
/// annotated boxes. `DR(b)` is the fraction of all boxes overlapped above the
/// threshold by one of the first `b` proposals of their page. The AUC
/// integrates by trapezoids over `b / max(budgets)`, starting from (0, 0).
pub fn detection_rate_curve(proposals: &[Vec<Rect>], gts: &[Vec<Rect>], budgets: &[usize]) -> Result<DrCurve> {
    if budgets.is_empty() || budgets.windows(2).any(|w| w[0] >= w[1]) || budgets[0] == 0 {
        return Err(Error::InvalidParameter(
            "budgets must be positive and strictly ascending".into(),
        ));
    }
    if proposals.len() != gts.len() {
        return Err(Error::InvalidParameter(format!(
            "{} proposal lists for {} annotated pages",
            proposals.len(),
            gts.len()
        )));
    }
    // Rank of the first proposal covering each box.
    let mut first_cover = Vec::new();
    for (props, boxes) in proposals.iter().zip(gts) {
        for b in boxes {
            let rank = props.iter().position(|p| overlap_ratio(p, b) > OVERLAP_THRESHOLD);
            first_cover.push(rank);
        }
    }
    let total = first_cover.len();
    let rates: Vec<f64> = budgets
        .iter()
        .map(|&budget| {
            if total == 0 {
                return 0.0;
            }
            let covered = first_cover.iter().filter(|r| matches!(r, Some(r) if *r < budget)).count();
            covered as f64 / total as f64
        })
        .collect();
    let max = *budgets.last().expect("non-empty") as f64;
    let mut auc = 0.0;
    let (mut px, mut py) = (0.0, 0.0);
    for (&b, &r) in budgets.iter().zip(&rates) {
        let x = b as f64 / max;
        auc += (x - px) * (py + r) / 2.0;
        px = x;
        py = r;
    }
    Ok(DrCurve {
        budgets: budgets.to_vec(),
        rates,
        auc,
    })
}

/// Plain multi-scale sliding windows in a seeded random order: square sides
/// from `min_side` growing by half each step up to the page's shorter side,
/// stride half a side.
pub fn sliding_windows(page_w: u32, page_h: u32, min_side: u32, seed: u64) -> Vec<Rect> {
    let mut out = Vec::new();
    let limit = page_w.min(page_h);
    let mut side = min_side.max(1);
    while side <= limit {
        let stride = (side / 2).max(1) as usize;
        for y in (0..=page_h - side).step_by(stride) {
            for x in (0..=page_w - side).step_by(stride) {
                out.push(Rect::new(x, y, side, side));
            }
        }
        let next = side + side / 2;
        side = if next == side { side + 1 } else { next };
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Selective-search and sliding-window curves on the same pages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalComparison {
    pub selective_search: DrCurve,
    pub sliding_window: DrCurve,
}

/// Compares the proposal stage configured by `cfg` with the sliding-window
/// baseline on annotated pages. `pages[i]` is annotated by `gts[i]`.
pub fn compare_proposals(
    cfg: &IndexConfig,
    pages: &[(u32, GrayImage)],
    gts: &[Vec<Rect>],
    budgets: &[usize],
) -> Result<ProposalComparison> {
    let ours: Vec<Vec<Rect>> = pages
        .par_iter()
        .map(|(page_id, img)| {
            let mask = compute_margin_mask(img, &cfg.margin).unwrap_or_else(|d| d.mask);
            let pcfg = cfg.page_proposal_config(*page_id);
            ranked_windows(*page_id, img, &mask, &pcfg, cfg.min_side, cfg.margin.threshold)
                .into_iter()
                .map(|w| w.rect())
                .collect()
        })
        .collect();
    let baseline: Vec<Vec<Rect>> = pages
        .iter()
        .map(|(page_id, img)| {
            sliding_windows(img.width(), img.height(), cfg.min_side, cfg.seed ^ *page_id as u64)
        })
        .collect();
    Ok(ProposalComparison {
        selective_search: detection_rate_curve(&ours, gts, budgets)?,
        sliding_window: detection_rate_curve(&baseline, gts, budgets)?,
    })
}

pub fn write_proposals_csv(cmp: &ProposalComparison, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let res = (|| -> csv::Result<()> {
        out.write_record(["windows", "selective_search", "sliding_window"])?;
        let ss = &cmp.selective_search;
        let sw = &cmp.sliding_window;
        for i in 0..ss.budgets.len() {
            out.write_record([
                ss.budgets[i].to_string(),
                format!("{:.6}", ss.rates[i]),
                format!("{:.6}", sw.rates[i]),
            ])?;
        }
        out.write_record(["auc".to_string(), format!("{:.6}", ss.auc), format!("{:.6}", sw.auc)])?;
        out.flush()?;
        Ok(())
    })();
    res.map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e.to_string()))
}

/// Target label of a query file: the stem up to the first `__`, so
/// `cat__02.png` queries for `cat`.
pub fn query_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    match stem.find("__") {
        Some(i) => stem[..i].to_string(),
        None => stem.into_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizeRow {
    pub query: String,
    pub label: String,
    pub average_precision: f64,
    pub true_hits: usize,
    pub num_relevant: usize,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizeReport {
    pub top: usize,
    pub images: usize,
    pub patches: usize,
    pub memory_bytes: usize,
    pub rows: Vec<LocalizeRow>,
    pub map: f64,
    pub mean_runtime_ms: f64,
}

/// Runs each sketch against the index at window level, judges the top
/// results against the ground truth sharing its label, and averages AP.
/// Queries run one after another so their runtimes are not contended.
pub fn localize(
    index: &Index,
    queries: &[(String, GrayImage)],
    gts: &[GroundTruth],
    top: usize,
) -> Result<LocalizeReport> {
    if top == 0 {
        return Err(Error::InvalidParameter("top must be >= 1".into()));
    }
    validate_ground_truth(gts, index)?;
    let mut rows = Vec::with_capacity(queries.len());
    let mut judged = Vec::with_capacity(queries.len());
    for (name, canvas) in queries {
        let label = query_label(Path::new(name));
        let relevant: Vec<&GroundTruth> = gts.iter().filter(|g| g.label == label).collect();
        let started = Instant::now();
        let hits = index.query_sketch(canvas, top, HitMode::Windows)?;
        let runtime_ms = started.elapsed().as_secs_f64() * 1e3;
        let preds: Vec<Prediction> = hits.iter().map(Prediction::from).collect();
        let j = judge(&preds, &relevant);
        rows.push(LocalizeRow {
            query: name.clone(),
            label,
            average_precision: average_precision_at_k(&j, top),
            true_hits: j.hits.iter().filter(|&&h| h).count(),
            num_relevant: j.num_relevant,
            runtime_ms,
        });
        judged.push(j);
    }
    let mem = index.memory_report();
    Ok(LocalizeReport {
        top,
        images: mem.pages,
        patches: mem.windows,
        memory_bytes: mem.total_bytes,
        map: map_at_k(&judged, top),
        mean_runtime_ms: mean(rows.iter().map(|r| r.runtime_ms)),
        rows,
    })
}

pub fn write_localize_csv(report: &LocalizeReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let map_col = format!("map@{}", report.top);
    let shared = [
        report.images.to_string(),
        report.patches.to_string(),
        report.memory_bytes.to_string(),
    ];
    let res = (|| -> csv::Result<()> {
        out.write_record([
            "query", "label", "images", "patches", "memory_bytes", map_col.as_str(), "runtime_ms",
        ])?;
        for r in &report.rows {
            out.write_record([
                r.query.clone(),
                r.label.clone(),
                shared[0].clone(),
                shared[1].clone(),
                shared[2].clone(),
                format!("{:.6}", r.average_precision),
                format!("{:.3}", r.runtime_ms),
            ])?;
        }
        out.write_record([
            "mean".to_string(),
            String::new(),
            shared[0].clone(),
            shared[1].clone(),
            shared[2].clone(),
            format!("{:.6}", report.map),
            format!("{:.3}", report.mean_runtime_ms),
        ])?;
        out.flush()?;
        Ok(())
    })();
    res.map_err(csv_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judged(hits: &[bool], n: usize) -> Judged {
        Judged {
            hits: hits.to_vec(),
            num_relevant: n,
        }
    }

    #[test]
    fn overlap_cases() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(overlap_ratio(&a, &a), 1.0);
        assert_eq!(overlap_ratio(&a, &Rect::new(20, 20, 5, 5)), 0.0);
        assert_eq!(overlap_ratio(&a, &Rect::new(5, 0, 10, 10)), 50.0 / 150.0);
        assert_eq!(overlap_ratio(&a, &Rect::new(10, 0, 10, 10)), 0.0);
    }

    #[test]
    fn two_predictions_on_one_box_credit_once() {
        let gt = GroundTruth {
            page_id: 3,
            label: "x".into(),
            boxes: vec![Rect::new(0, 0, 10, 10)],
        };
        let p = Prediction {
            page_id: 3,
            rect: Rect::new(0, 0, 10, 10),
        };
        assert_eq!(judge(&[p, p], &[&gt]).hits, vec![true, false]);
        let wrong_page = Prediction { page_id: 4, ..p };
        assert_eq!(judge(&[wrong_page], &[&gt]).hits, vec![false]);
    }

    #[test]
    fn exact_boxes_in_order_are_all_true() {
        let gt = GroundTruth {
            page_id: 0,
            label: "x".into(),
            boxes: vec![Rect::new(0, 0, 10, 10), Rect::new(30, 30, 8, 8), Rect::new(0, 50, 20, 5)],
        };
        let preds: Vec<Prediction> = gt.boxes.iter().map(|&rect| Prediction { page_id: 0, rect }).collect();
        assert_eq!(judge(&preds, &[&gt]).hits, vec![true; 3]);
    }

    #[test]
    fn judge_prefers_the_best_overlap() {
        let gt = GroundTruth {
            page_id: 0,
            label: "x".into(),
            boxes: vec![Rect::new(0, 0, 10, 10), Rect::new(2, 0, 10, 10)],
        };
        // Best match is the second box; the first remains for the next hit.
        let preds = [
            Prediction { page_id: 0, rect: Rect::new(2, 0, 10, 10) },
            Prediction { page_id: 0, rect: Rect::new(0, 0, 10, 10) },
        ];
        assert_eq!(judge(&preds, &[&gt]).hits, vec![true, true]);
    }

    #[test]
    fn threshold_is_strict() {
        // IoU exactly one half is not a hit.
        let gt = GroundTruth {
            page_id: 0,
            label: "x".into(),
            boxes: vec![Rect::new(0, 0, 10, 10)],
        };
        let half = Prediction { page_id: 0, rect: Rect::new(0, 0, 10, 20) };
        assert_eq!(overlap_ratio(&half.rect, &gt.boxes[0]), 0.5);
        assert_eq!(judge(&[half], &[&gt]).hits, vec![false]);
    }

    #[test]
    fn recall_and_ap_examples() {
        let j = judged(&[false, false, true], 1);
        assert_eq!(recall_at_k(&j, 2), 0.0);
        assert_eq!(recall_at_k(&j, 3), 1.0);
        let j = judged(&[true, false, true], 2);
        assert!((average_precision_at_k(&j, 100) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision_at_k(&judged(&[false; 5], 3), 100), 0.0);
        assert_eq!(average_precision_at_k(&judged(&[], 0), 100), 0.0);
    }

    #[test]
    fn detection_rate_examples() {
        let gts = vec![vec![Rect::new(0, 0, 50, 50), Rect::new(60, 60, 30, 30)]];
        let curve = detection_rate_curve(&gts, &gts, &[1, 2, 4]).unwrap();
        assert_eq!(curve.rates, vec![0.5, 1.0, 1.0]);
        let empty = detection_rate_curve(&[vec![]], &gts, &[1, 10]).unwrap();
        assert_eq!(empty.rates, vec![0.0, 0.0]);
        assert_eq!(empty.auc, 0.0);
        let dots: Vec<Rect> = (0..40).map(|i| Rect::new(i * 2, i, 1, 1)).collect();
        let c = detection_rate_curve(&[dots], &gts, &[10, 40]).unwrap();
        assert_eq!(c.rates, vec![0.0, 0.0]);
        assert!(detection_rate_curve(&gts, &gts, &[3, 2]).is_err());
    }

    #[test]
    fn auc_of_perfect_curve() {
        let gts = vec![vec![Rect::new(0, 0, 5, 5)]];
        let c = detection_rate_curve(&gts, &gts, &[1, 2, 4]).unwrap();
        // (0,0) to (0.25,1) then flat to 1.
        assert!((c.auc - (0.125 + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn sliding_windows_cover_the_page() {
        let ws = sliding_windows(200, 150, 50, 1);
        assert!(ws.iter().all(|r| r.fits_in(200, 150) && r.w == r.h && r.w >= 50));
        assert!(ws.contains(&Rect::new(0, 0, 50, 50)));
        assert!(ws.contains(&Rect::new(74, 74, 75, 75)));
        assert_eq!(ws.len(), sliding_windows(200, 150, 50, 2).len());
    }

    #[test]
    fn labels_from_file_names() {
        assert_eq!(query_label(Path::new("q/cat__02.png")), "cat");
        assert_eq!(query_label(Path::new("dog.png")), "dog");
    }

    #[test]
    fn csv_layout() {
        let report = LocalizeReport {
            top: 100,
            images: 2,
            patches: 10,
            memory_bytes: 999,
            rows: vec![LocalizeRow {
                query: "a__1.png".into(),
                label: "a".into(),
                average_precision: 0.5,
                true_hits: 1,
                num_relevant: 2,
                runtime_ms: 1.25,
            }],
            map: 0.5,
            mean_runtime_ms: 1.25,
        };
        let mut buf = Vec::new();
        write_localize_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "query,label,images,patches,memory_bytes,map@100,runtime_ms");
        assert_eq!(lines[1], "a__1.png,a,2,10,999,0.500000,1.250");
        assert_eq!(lines[2], "mean,,2,10,999,0.500000,1.250");
    }
}
