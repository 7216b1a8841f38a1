mod common;

use std::collections::HashSet;

use sketchdex_core::engine::{build_from_rasters, build_index, HitMode, Index, IndexConfig, PageRecord, PageSource};
use sketchdex_core::error::Error;
use sketchdex_core::margin::compute_margin_mask;
use sketchdex_core::pq::{CodeArray, PqCode, PqCodebook};
use sketchdex_core::proposal::{Rect, Window};
use sketchdex_core::raster::GrayImage;
use sketchdex_core::synth::write_glyph_corpus;

fn exact_sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

#[test]
fn blank_pages_give_empty_records() {
    let pages = (0..3)
        .map(|i| (PageSource::new(format!("blank{i}.png"), "blank"), GrayImage::filled(200, 150, 255)))
        .collect();
    let index = build_from_rasters(pages, &common::quick_config()).unwrap();
    assert_eq!(index.pages.len(), 3);
    assert!(index.pages.iter().all(PageRecord::is_empty));
    let y = vec![1.0f32 / 16.0; 256];
    assert!(index.search_vector(&y, 5, HitMode::BestPerPage).unwrap().is_empty());
}

#[test]
fn one_page_with_one_object_respects_window_rules() {
    let corpus = common::glyph_corpus(1, 4);
    let (_, page) = &corpus.pages[0];
    let cfg = common::quick_config();
    let mask = compute_margin_mask(page, &cfg.margin).unwrap();
    let index = build_from_rasters(corpus.pages.clone(), &cfg).unwrap();
    let rec = &index.pages[0];
    assert!(!rec.is_empty());
    for w in &rec.windows {
        assert!(w.side >= 100);
        assert!(w.margin_ratio(&mask).unwrap() < 0.1);
        assert_eq!(w.page_id, 0);
    }
}

#[test]
fn single_code_index_returns_its_adc_distance() {
    let centroids: Vec<f32> = (0..2 * 4 * 2).map(|i| (i as f32 * 0.37).sin()).collect();
    let codebook = PqCodebook::from_centroids(2, 4, 4, 0, centroids).unwrap();
    let mut codes = CodeArray::new(2);
    codes.push(&PqCode(vec![3, 1]));
    let window = Window { page_id: 0, x: 0, y: 0, side: 10 };
    let index = Index {
        config: IndexConfig { cells: 1, subspaces: 2, centroids: 4, ..IndexConfig::default() },
        codebook: codebook.clone(),
        pages: vec![PageRecord {
            page_id: 0,
            title_id: "t".into(),
            source: "none".into(),
            width: 10,
            height: 10,
            windows: vec![window],
            codes,
        }],
    };
    let y = [0.5f32, -0.25, 0.125, 1.0];
    let hits = index.search_vector(&y, 3, HitMode::BestPerPage).unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].window, window);
    let exact = exact_sq(&y, &codebook.decode(&[3, 1]).unwrap());
    assert!((hits[0].distance as f64 - exact).abs() <= 1e-6 * exact.max(1.0));
}

#[test]
fn search_matches_decode_and_rank_oracle() {
    let corpus = common::glyph_corpus(50, 12);
    let index = build_from_rasters(corpus.pages, &common::quick_config()).unwrap();
    let queries: Vec<Vec<f32>> = (0..5)
        .map(|q| {
            let rec = &index.pages[q * 9];
            index.codebook.decode(rec.codes.get(0)).unwrap()
        })
        .collect();
    for (qi, y) in queries.iter().enumerate() {
        let hits = index.search_vector(y, 50, HitMode::BestPerPage).unwrap();
        // oracle: best decoded window per page, pages ranked by (distance, id)
        let mut oracle: Vec<(f64, u32)> = index
            .pages
            .iter()
            .filter(|p| !p.is_empty())
            .map(|p| {
                let best = p
                    .codes
                    .iter()
                    .map(|c| exact_sq(y, &index.codebook.decode(c).unwrap()))
                    .fold(f64::MAX, f64::min);
                (best, p.page_id)
            })
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        assert_eq!(hits.len(), oracle.len());
        let pages: HashSet<u32> = hits.iter().map(|h| h.page_id).collect();
        assert_eq!(pages.len(), hits.len(), "one hit per page");
        for (rank, (hit, (d, page))) in hits.iter().zip(&oracle).enumerate() {
            assert!((hit.distance as f64 - d).abs() <= 1e-5 * d.max(1e-3), "query {qi} rank {rank}");
            if hit.page_id != *page {
                let own = oracle.iter().find(|o| o.1 == hit.page_id).unwrap().0;
                assert!((own - d).abs() <= 1e-5 * d.max(1e-3), "query {qi} rank {rank}: page order");
            }
        }
        assert_eq!(hits[0].distance, 0.0);
        assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));
    }
}

#[test]
fn window_mode_returns_global_top_k() {
    let corpus = common::glyph_corpus(10, 3);
    let index = build_from_rasters(corpus.pages, &common::quick_config()).unwrap();
    let y = index.codebook.decode(index.pages[4].codes.get(0)).unwrap();
    let hits = index.search_vector(&y, 30, HitMode::Windows).unwrap();
    assert_eq!(hits.len(), 30.min(index.window_count()));
    let mut all: Vec<f32> = index
        .pages
        .iter()
        .flat_map(|p| p.codes.iter().map(|c| index.codebook.adc_table(&y).unwrap().distance(c)))
        .collect();
    all.sort_by(f32::total_cmp);
    for (h, d) in hits.iter().zip(&all) {
        assert!((h.distance - d).abs() <= 1e-5);
    }
}

#[test]
fn region_feedback_finds_its_page() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_corpus(dir.path(), 12, 12, 6).unwrap();
    let sources: Vec<PageSource> = manifest.pages.iter().map(|p| PageSource::new(p, "syn")).collect();
    let index = build_index(&sources, &common::quick_config()).unwrap().index;
    for page_id in [0u32, 5, 11] {
        let rec = index.page(page_id).unwrap();
        let w = rec.windows[rec.windows.len() / 2];
        let hits = index.region_query(page_id, w.rect(), 12, HitMode::BestPerPage).unwrap();
        assert!(hits.windows(2).all(|p| p[0].distance <= p[1].distance));
        let own = hits.iter().find(|h| h.page_id == page_id).expect("page among hits");
        // at most the quantization error of that window's own code
        let page = index.load_page(page_id).unwrap();
        let f = sketchdex_core::engine::region_feature(&page, w.rect(), index.config.cells, index.config.magnitude_floor)
            .unwrap()
            .unwrap();
        let code = index.codebook.encode(f.values()).unwrap();
        let distortion = exact_sq(f.values(), &index.codebook.decode(&code.0).unwrap());
        assert!(own.distance as f64 <= distortion + 1e-5, "page {page_id}");
    }
    // white area inside the frame
    assert!(matches!(
        index.region_query(0, Rect::new(0, 0, 6, 6), 5, HitMode::BestPerPage),
        Err(Error::BlankRegion)
    ));
    assert!(matches!(
        index.region_query(0, Rect::new(300, 300, 40, 40), 5, HitMode::BestPerPage),
        Err(Error::OutOfBounds { .. })
    ));
    assert!(matches!(
        index.region_query(99, Rect::new(0, 0, 10, 10), 5, HitMode::BestPerPage),
        Err(Error::PageNotFound(99))
    ));
}

#[test]
fn unreadable_pages_are_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_corpus(dir.path(), 3, 3, 1).unwrap();
    let bad = dir.path().join("broken.png");
    std::fs::write(&bad, b"not an image").unwrap();
    let mut sources: Vec<PageSource> = manifest.pages.iter().map(|p| PageSource::new(p, "syn")).collect();
    sources.insert(1, PageSource::new(&bad, "syn"));
    sources.push(PageSource::new(dir.path().join("missing.png"), "syn"));
    let outcome = build_index(&sources, &common::quick_config()).unwrap();
    assert_eq!(outcome.index.pages.len(), 3);
    assert_eq!(outcome.failures.len(), 2);
    assert!(matches!(
        build_index(&sources[1..2], &common::quick_config()),
        Err(Error::NoPages { failures: 1 })
    ));
}

#[test]
fn saved_index_round_trips_and_truncation_is_detected() {
    let corpus = common::glyph_corpus(6, 8);
    let index = build_from_rasters(corpus.pages, &common::quick_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.skdx");
    index.save(&path).unwrap();
    assert_eq!(Index::load(&path).unwrap(), index);

    let bytes = std::fs::read(&path).unwrap();
    for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        match Index::load(&path) {
            Err(Error::CorruptIndex { offset, .. }) => assert!(offset <= cut as u64),
            other => panic!("cut {cut}: {other:?}"),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(Index::load(&path), Err(Error::CorruptIndex { offset: 0, .. })));
}

#[test]
fn memory_report_adds_up() {
    let corpus = common::glyph_corpus(5, 2);
    let cfg = common::quick_config();
    let index = build_from_rasters(corpus.pages, &cfg).unwrap();
    let r = index.memory_report();
    let n: usize = index.pages.iter().map(|p| p.windows.len()).sum();
    assert_eq!(r.windows, n);
    assert_eq!(r.code_bytes, cfg.subspaces * n);
    assert_eq!(r.codebook_bytes, cfg.centroids * cfg.dim() * 4);
    assert_eq!(r.geometry_bytes, 16 * n);
    assert_eq!(r.total_bytes, r.code_bytes + r.codebook_bytes + r.geometry_bytes);
}
