use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use sketchdex_client::Client;
use sketchdex_core::engine::{analyze_page, build_index, HitMode, Index, IndexConfig};
use sketchdex_core::eoh::sketch_to_feature;
use sketchdex_core::eval::{self, load_ground_truth};
use sketchdex_core::margin::compute_margin_mask;
use sketchdex_core::proposal::{propose_regions, Rect};
use sketchdex_core::raster::GrayImage;
use sketchdex_core::synth::write_glyph_corpus;
use sketchdex_core::wire::{HitJson, DEFAULT_TOP};

mod pages;

#[derive(Debug, Parser)]
#[command(name = "sketchdex", version, about = "Sketch-based retrieval over line-art pages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Index every PNG/JPEG under a directory.
    Build(BuildArgs),
    /// Search with a sketch image.
    Query(QueryArgs),
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write a synthetic glyph corpus with queries and ground truth.
    Synth(SynthArgs),
    /// Dumps of intermediate stages.
    #[command(subcommand)]
    Debug(DebugCommand),
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with IndexConfig fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cells: Option<u32>,
    /// Subspaces per code.
    #[arg(long)]
    m: Option<usize>,
    /// Centroids per subspace.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_side: Option<u32>,
    /// Largest margin fraction a window may cover.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long, conflicts_with = "server", required_unless_present = "server")]
    index: Option<PathBuf>,
    /// Base URL of a running server.
    #[arg(long)]
    server: Option<String>,
    #[arg(long)]
    sketch: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP)]
    top: usize,
    /// Report windows instead of one hit per page.
    #[arg(long)]
    windows: bool,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// mAP@K of sketch queries against ground-truth boxes, as CSV.
    Localize {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Directory of `<label>__<name>.png` sketches.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        top: usize,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection rate of proposals against sliding windows, as CSV.
    Proposals {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100,200,500,1000")]
        budgets: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pages: usize,
    #[arg(long, default_value_t = 10)]
    labels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum DebugCommand {
    /// Proposal boxes and kept windows per page, as JSON.
    Proposals {
        #[arg(long, required = true, num_args = 1..)]
        page: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Margin overlay PNG of a page.
    Mask {
        #[arg(long)]
        page: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// EOH grid of a sketch, as JSON.
    Eoh {
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long, default_value_t = 8)]
        cells: u32,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .init();
    match Cli::parse().command {
        Command::Build(args) => build(args),
        Command::Query(args) => query(args),
        Command::Eval(cmd) => eval_cmd(cmd),
        Command::Synth(args) => {
            let m = write_glyph_corpus(&args.out, args.pages, args.labels, args.seed)?;
            eprintln!(
                "wrote {} pages, {} queries and gt.json under {}",
                m.pages.len(),
                m.queries.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Debug(cmd) => debug(cmd),
    }
}

fn read_config(path: Option<&Path>) -> Result<IndexConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => IndexConfig::default(),
    };
    Ok(cfg)
}

fn build(args: BuildArgs) -> Result<()> {
    let mut cfg = read_config(args.config.as_deref())?;
    if let Some(v) = args.cells {
        cfg.cells = v;
    }
    if let Some(v) = args.m {
        cfg.subspaces = v;
    }
    if let Some(v) = args.k {
        cfg.centroids = v;
    }
    if let Some(v) = args.min_side {
        cfg.min_side = v;
    }
    if let Some(v) = args.margin {
        cfg.margin.threshold = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;

    let sources = pages::discover(&args.input)?;
    if sources.is_empty() {
        bail!("no PNG or JPEG files under {}", args.input.display());
    }
    let outcome = build_index(&sources, &cfg)?;
    for (path, err) in &outcome.failures {
        eprintln!("skipped {}: {err}", path.display());
    }
    outcome.index.save(&args.out)?;
    let mem = outcome.index.memory_report();
    eprintln!(
        "indexed {} pages, {} windows, {} bytes -> {}",
        mem.pages,
        mem.windows,
        mem.total_bytes,
        args.out.display()
    );
    Ok(())
}

/// One line of `query` output.
#[derive(Debug, Serialize)]
struct HitLine<'a> {
    page_id: u32,
    title_id: &'a str,
    x: u32,
    y: u32,
    side: u32,
    distance: f32,
}

impl<'a> From<&'a HitJson> for HitLine<'a> {
    fn from(h: &'a HitJson) -> Self {
        HitLine {
            page_id: h.page_id,
            title_id: &h.title_id,
            x: h.x,
            y: h.y,
            side: h.side,
            distance: h.distance,
        }
    }
}

fn query(args: QueryArgs) -> Result<()> {
    let hits: Vec<HitJson> = match (&args.index, &args.server) {
        (Some(path), _) => {
            let index = Index::load(path)?;
            let canvas = GrayImage::open(&args.sketch)?;
            let mode = if args.windows { HitMode::Windows } else { HitMode::BestPerPage };
            let hits = index.query_sketch(&canvas, args.top, mode)?;
            hits.iter().map(|h| HitJson::from_hit(&index, h)).collect()
        }
        (None, Some(url)) => {
            let png = std::fs::read(&args.sketch).with_context(|| format!("reading {}", args.sketch.display()))?;
            let client = Client::new(url.as_str())?;
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            rt.block_on(client.query(png, Some(args.top), args.windows))?.hits
        }
        (None, None) => bail!("one of --index or --server is required"),
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for h in &hits {
        serde_json::to_writer(&mut out, &HitLine::from(h))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout()),
    })
}

fn eval_cmd(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Localize {
            index,
            gt,
            queries,
            top,
            out,
        } => {
            let index = Index::load(&index)?;
            let gts = load_ground_truth(&gt)?;
            let mut sketches = Vec::new();
            for path in pages::images_in(&queries)? {
                let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                sketches.push((name, GrayImage::open(&path)?));
            }
            if sketches.is_empty() {
                bail!("no query images under {}", queries.display());
            }
            let report = eval::localize(&index, &sketches, &gts, top)?;
            eval::write_localize_csv(&report, output(out.as_deref())?)?;
            eprintln!("map@{} = {:.4} over {} queries", top, report.map, report.rows.len());
            Ok(())
        }
        EvalCommand::Proposals { index, gt, budgets, out } => {
            let index = Index::load(&index)?;
            let gts = load_ground_truth(&gt)?;
            eval::validate_ground_truth(&gts, &index)?;
            let mut boxes: BTreeMap<u32, Vec<Rect>> = BTreeMap::new();
            for g in gts {
                boxes.entry(g.page_id).or_default().extend(g.boxes);
            }
            let mut rasters = Vec::with_capacity(boxes.len());
            let mut truth = Vec::with_capacity(boxes.len());
            for (page_id, b) in boxes {
                rasters.push((page_id, index.load_page(page_id)?));
                truth.push(b);
            }
            let cmp = eval::compare_proposals(&index.config, &rasters, &truth, &budgets)?;
            eval::write_proposals_csv(&cmp, output(out.as_deref())?)?;
            eprintln!(
                "auc selective_search = {:.4}, sliding_window = {:.4}",
                cmp.selective_search.auc, cmp.sliding_window.auc
            );
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct PageProposals {
    page: String,
    width: u32,
    height: u32,
    degenerate: bool,
    /// Raw selective-search boxes, before squarifying and filtering.
    boxes: Vec<Rect>,
    /// Square windows that survive the size and margin filters and have edges.
    windows: Vec<[u32; 3]>,
}

fn debug(cmd: DebugCommand) -> Result<()> {
    match cmd {
        DebugCommand::Proposals { page, config } => {
            let cfg = read_config(config.as_deref())?;
            cfg.validate()?;
            let mut dump = Vec::with_capacity(page.len());
            for (i, path) in page.iter().enumerate() {
                let img = GrayImage::open(path)?;
                let a = analyze_page(i as u32, &img, &cfg)?;
                dump.push(PageProposals {
                    page: path.display().to_string(),
                    width: img.width(),
                    height: img.height(),
                    degenerate: a.degenerate,
                    boxes: propose_regions(&img, &cfg.page_proposal_config(i as u32)),
                    windows: a.features.windows.iter().map(|w| [w.x, w.y, w.side]).collect(),
                });
            }
            serde_json::to_writer_pretty(io::stdout().lock(), &dump)?;
            println!();
            Ok(())
        }
        DebugCommand::Mask { page, out, config } => {
            let cfg = read_config(config.as_deref())?;
            let img = GrayImage::open(&page)?;
            let mask = match compute_margin_mask(&img, &cfg.margin) {
                Ok(m) => m,
                Err(d) => {
                    eprintln!("page is degenerate: no white area survives erosion");
                    d.mask
                }
            };
            std::fs::write(&out, mask.overlay_png(&img)).with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "{} of {} pixels are margin",
                mask.margin_pixels(),
                img.width() as u64 * img.height() as u64
            );
            Ok(())
        }
        DebugCommand::Eoh { sketch, cells } => {
            let canvas = GrayImage::open(&sketch)?;
            let Some(f) = sketch_to_feature(&canvas, cells, IndexConfig::default().magnitude_floor)? else {
                bail!("sketch contains no ink");
            };
            serde_json::to_writer(io::stdout().lock(), &f.grid())?;
            println!();
            Ok(())
        }
    }
}
