//! The `iclforge` command line. Diagnostics go to stderr; stdout carries
//! only machine-readable summaries.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use iclforge_core::data::{gen_synthetic_store, ExemplarKind, ExemplarStore, SyntheticKind, SyntheticSpec};
use iclforge_core::model::capture_trace;
use iclforge_core::ngram::{report, WindowMode, DEFAULT_ORDERS, DEFAULT_WINDOW};
use iclforge_core::probe::{probe_suite, DiagVariant, ProbeOptions};
use iclforge_core::seq::EvalSuite;
use iclforge_core::train::MetricRow;

use crate::binio::write_file;
use crate::checkpoint::load_checkpoint;
use crate::config::ExperimentConfig;
use crate::csvio::{append_metric_rows, ngram_csv, probe_csv, ProbeRecord};
use crate::run::{evaluate_suite, load_inputs, train_run, Inputs, RunDir, RunOptions};
use crate::store::{import_pgm_dir, save_store};
use crate::suite::{load_suite, split_name};
use crate::sweep::{apply_overrides, merge_tables, parse_override, run_sweep, SweepConfig};
use crate::tokens::{read_tokens, TokenFormat};
use crate::trace::export_trace;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "iclforge", version, about = "In-context learning experiments on episodic image-label sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic exemplar store or import a directory of P5 images.
    GenData(GenDataArgs),
    /// Train every seed of an experiment config into a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a frozen suite and append the result to the run's metrics.
    Eval(EvalArgs),
    /// Compute attention-probe metrics over a run's checkpoints.
    Probe(ProbeArgs),
    /// Report average n-gram repetitions per context window of a token stream.
    Ngram(NgramArgs),
    /// Run one child experiment per point of a parameter grid.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Gaussian,
    Glyph,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kind: DataKind,
    #[arg(long, default_value_t = 1623)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 28)]
    pub height: usize,
    #[arg(long, default_value_t = 28)]
    pub width: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Import one subdirectory of `.pgm` files per class instead of generating.
    #[arg(long, conflicts_with_all = ["kind", "classes", "per_class", "dim", "height", "width", "noise", "seed"])]
    pub import: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file, or a built-in profile name (`paper-defaults`, `desk-scale`).
    pub config: PathBuf,
    /// Run directory, overriding `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `section.key=value` override, applied before validation.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Continue an interrupted run from its latest checkpoints.
    #[arg(long)]
    pub resume: bool,
    /// Write the store, suites and manifest, then stop.
    #[arg(long)]
    pub prepare_only: bool,
    /// Stop every seed after this step, leaving a resumable run.
    #[arg(long, value_name = "STEP")]
    pub stop_after: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub run_dir: PathBuf,
    /// Suite file, or the split name of one of the run's suites (e.g. `icl-4w2s`).
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Arg-max over the whole label vocabulary instead of the task's labels.
    #[arg(long)]
    pub full_vocab: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    pub run_dir: PathBuf,
    /// Suite file or split name; defaults to the run's probe task.
    #[arg(long)]
    pub suite: Option<String>,
    /// Seeds to probe; defaults to every seed of the run.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Episodes traced per checkpoint; defaults to the run's probe setting.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Average all preceding image tokens for the image-image metric.
    #[arg(long)]
    pub all_images: bool,
    /// Use scaled QK scores instead of attention probabilities.
    #[arg(long)]
    pub pre_softmax: bool,
    /// Series CSV path; defaults to `<run>/probe.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Export attention traces of the first N episodes of each checkpoint.
    #[arg(long, default_value_t = 0)]
    pub trace_episodes: usize,
    /// Trace export directory; defaults to `<run>/traces`.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NgramArgs {
    pub tokens: PathBuf,
    /// `bin` (packed little-endian u32) or `text`; defaults by extension.
    #[arg(long)]
    pub format: Option<TokenFormat>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ORDERS)]
    pub ns: Vec<usize>,
    /// Slide the window over every start position instead of tiling.
    #[arg(long)]
    pub sliding: bool,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub config: PathBuf,
    /// `section.key=value` override applied to every child.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub resume: bool,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Probe(a) => probe(&a),
        Command::Ngram(a) => ngram(&a),
        Command::Sweep(a) => sweep(&a),
    }
}

fn stdout_line(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

fn kind_label(kind: ExemplarKind) -> String {
    match kind {
        ExemplarKind::Raster { height, width } => format!("raster-{height}x{width}"),
        ExemplarKind::Vector { dim } => format!("vector-{dim}"),
    }
}

fn store_summary(store: &ExemplarStore, hash: &str) -> String {
    format!(
        "classes={} exemplars={} kind={} sha256={hash}",
        store.num_classes(),
        store.num_exemplars(),
        kind_label(store.kind())
    )
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let store = match &a.import {
        Some(dir) => import_pgm_dir(dir)?,
        None => gen_synthetic_store(&SyntheticSpec {
            classes: a.classes,
            per_class: a.per_class,
            kind: match a.kind {
                DataKind::Gaussian => SyntheticKind::GaussianPrototype { dim: a.dim },
                DataKind::Glyph => SyntheticKind::ProceduralGlyph {
                    height: a.height,
                    width: a.width,
                },
            },
            noise: a.noise,
            seed: a.seed,
        })
        .map_err(|e| Error::Config(e.to_string()))?,
    };
    let hash = save_store(&store, &a.out)?;
    stdout_line(&store_summary(&store, &hash));
    Ok(())
}

fn overrides(set: &[String]) -> Result<toml::Table> {
    let mut table = toml::Table::new();
    for s in set {
        merge_tables(&mut table, &parse_override(s)?);
    }
    Ok(table)
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = apply_overrides(&ExperimentConfig::load(&a.config)?, &overrides(&a.set)?)?;
    if let Some(out) = &a.out {
        cfg.output.dir.clone_from(out);
    }
    let summary = train_run(
        &cfg,
        RunOptions {
            resume: a.resume,
            prepare_only: a.prepare_only,
            threads: None,
            stop_after: a.stop_after,
        },
    )?;
    stdout_line(&format!(
        "run={} store_sha256={} seeds={}",
        summary.dir.root.display(),
        summary.manifest.store_sha256,
        cfg.train.seeds.len()
    ));
    for log in &summary.logs {
        for split in log.splits().iter().filter(|s| !s.starts_with("probe-")) {
            for seed in log.seeds() {
                if let Some(&(step, value)) = log.series(seed, split).last() {
                    stdout_line(&format!("seed={seed} step={step} split={split} value={value}"));
                }
            }
        }
    }
    Ok(())
}

/// Resolves a suite argument: a split name of the run or a suite file,
/// checked against the run's store.
fn resolve_suite(run: &RunDir, inputs: &Inputs, arg: &str) -> Result<EvalSuite> {
    if let Some(s) = inputs.suite(arg) {
        return Ok(s.clone());
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{arg:?} is neither a suite file nor a split of {}",
            run.root.display()
        )));
    }
    Ok(load_suite(path, &inputs.store, &inputs.store_hash)?.0)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let run = RunDir::new(&a.run_dir);
    let (_, inputs) = load_inputs(&run)?;
    let suite = resolve_suite(&run, &inputs, &a.suite)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    if ck.model.config() != &inputs.model {
        return Err(Error::Config(format!(
            "{} was not trained on this run's model config",
            a.checkpoint.display()
        )));
    }
    let acc = evaluate_suite(&ck.model, &inputs.store, &suite, a.full_vocab)?;
    let mut split = split_name(suite.kind);
    if a.full_vocab && split.starts_with("icl-") {
        split.push_str("-full");
    }
    let row = MetricRow {
        step: ck.step,
        seed: ck.seed,
        split: split.clone(),
        value: acc,
    };
    append_metric_rows(&run.metrics(), std::slice::from_ref(&row))?;
    stdout_line(&format!("{},{},{},{}", row.step, row.seed, row.split, row.value));
    Ok(())
}

fn probe(a: &ProbeArgs) -> Result<()> {
    let run = RunDir::new(&a.run_dir);
    let (manifest, inputs) = load_inputs(&run)?;
    let cfg = &manifest.config;
    let suite_arg = a.suite.clone().unwrap_or_else(|| format!("icl-{}", cfg.probe.task));
    let suite = resolve_suite(&run, &inputs, &suite_arg)?;
    let n = a.episodes.unwrap_or(cfg.probe.episodes).clamp(1, suite.episodes.len());
    let episodes = &suite.episodes[..n];
    let options = ProbeOptions {
        diag: if a.all_images || cfg.probe.diag == crate::config::DiagMode::AllImages {
            DiagVariant::AllImages
        } else {
            DiagVariant::NearestSample
        },
        pre_softmax: a.pre_softmax || cfg.probe.pre_softmax,
    };
    let seeds = if a.seeds.is_empty() { cfg.train.seeds.clone() } else { a.seeds.clone() };
    let trace_root = a.trace_dir.clone().unwrap_or_else(|| run.root.join("traces"));
    let mut rows = Vec::new();
    for seed in seeds {
        let snapshots = run.snapshots(seed)?;
        if snapshots.is_empty() {
            return Err(Error::Config(format!("seed {seed} has no checkpoints in {}", run.root.display())));
        }
        let mut prev = None;
        for (step, path) in snapshots {
            let ck = load_checkpoint(&path)?;
            if ck.model.config() != &inputs.model {
                return Err(Error::Config(format!("{} has a different model config", path.display())));
            }
            if prev.is_some_and(|p| p >= step) {
                return Err(Error::Config(format!("{} breaks step order", path.display())));
            }
            prev = Some(step);
            let m = probe_suite(&ck.model, &inputs.store, episodes, options)?;
            for l in 0..ck.model.config().layers {
                for h in 0..ck.model.config().heads {
                    for (metric, values) in m.named() {
                        rows.push(ProbeRecord {
                            step,
                            seed,
                            layer: l,
                            head: h,
                            metric: metric.into(),
                            value: values.get(l, h),
                        });
                    }
                }
            }
            for (i, ep) in episodes.iter().take(a.trace_episodes).enumerate() {
                let (trace, _) = capture_trace(&ck.model, &inputs.store, ep)?;
                let dir = trace_root
                    .join(format!("seed-{seed}"))
                    .join(format!("step-{step:08}"))
                    .join(format!("episode-{i:05}"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                export_trace(&trace, &dir)?;
            }
        }
    }
    let out = a.out.clone().unwrap_or_else(|| run.root.join("probe.csv"));
    write_file(&out, &probe_csv(&rows))?;
    stdout_line(&format!("probe={} rows={}", out.display(), rows.len()));
    Ok(())
}

fn ngram(a: &NgramArgs) -> Result<()> {
    let format = a.format.unwrap_or_else(|| TokenFormat::from_path(&a.tokens));
    let tokens = read_tokens(&a.tokens, format)?;
    let mode = if a.sliding { WindowMode::Sliding } else { WindowMode::Blocked };
    let rep = report(&tokens, a.window, &a.ns, mode).map_err(|e| Error::Config(e.to_string()))?;
    let csv = ngram_csv(&rep);
    match &a.out {
        Some(p) => write_file(p, &csv)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&csv).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig::load(&a.config)?;
    merge_tables(&mut cfg.set, &overrides(&a.set)?);
    let results = run_sweep(&cfg, a.resume)?;
    stdout_line(&format!(
        "sweep={} children={}",
        cfg.dir.join(crate::sweep::SWEEP_FILE).display(),
        results.len()
    ));
    Ok(())
}
