//! Training runs: input preparation, per-seed training with periodic
//! evaluation and checkpoints, resume, and cross-seed aggregation.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use iclforge_core::data::{
    class_sampler, gen_synthetic_store, instance_relabel, split_holdout, zipf_subsample, ClassTable, ExemplarStore,
};
use iclforge_core::model::{EmbedderConfig, Model, ModelConfig};
use iclforge_core::probe::{probe_suite, ProgressMetrics};
use iclforge_core::seq::{build_icl_eval, build_iwl_eval, presample_suite, BatchSampler, EvalSuite, SuiteKind};
use iclforge_core::train::{aggregate_runs, evaluate_icl, evaluate_iwl, MetricLog, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{ExperimentConfig, StoreSource};
use crate::csvio::{aggregate_csv, read_metrics, write_metrics};
use crate::store::{load_store, save_store};
use crate::suite::{load_suite, save_suite, split_name};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const STORE_FILE: &str = "store.exb1";
pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const LATEST_CHECKPOINT: &str = "latest.iclf";
pub const TRAIN_LOSS: &str = "train-loss";

/// Worker threads: `ICLFORGE_THREADS` if set, else the available cores.
pub fn worker_threads() -> Result<usize> {
    match std::env::var("ICLFORGE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("ICLFORGE_THREADS={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f` over `items` on at most `threads` workers, returning results in
/// item order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                out.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }
    pub fn store(&self) -> PathBuf {
        self.root.join(STORE_FILE)
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join(METRICS_FILE)
    }
    pub fn aggregate(&self) -> PathBuf {
        self.root.join(AGGREGATE_FILE)
    }
    pub fn suite_file(split: &str) -> String {
        format!("suites/{split}.icls")
    }
    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join("seeds").join(seed.to_string())
    }
    pub fn seed_metrics(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join(METRICS_FILE)
    }
    pub fn latest(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join(LATEST_CHECKPOINT)
    }
    pub fn snapshot(&self, seed: u64, step: u64) -> PathBuf {
        self.seed_dir(seed).join(format!("step-{step:08}.iclf"))
    }

    /// Model-only snapshots of one seed as `(step, path)`, by step.
    pub fn snapshots(&self, seed: u64) -> Result<Vec<(u64, PathBuf)>> {
        let dir = self.seed_dir(seed);
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut out = Vec::new();
        for e in entries {
            let path = e.map_err(|e| Error::io(&dir, e))?.path();
            let step = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("step-")?.strip_suffix(".iclf")?.parse::<u64>().ok());
            if let Some(step) = step {
                out.push((step, path));
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub split: String,
    pub file: String,
    pub sha256: String,
    pub episodes: usize,
}

/// Resolved configuration and content hashes of every run input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub iclforge_version: String,
    pub store_file: String,
    pub store_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_store_sha256: Option<String>,
    pub label_vocab: usize,
    pub parameters: usize,
    pub suites: Vec<SuiteEntry>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            what: "manifest",
            offset: e.span().map_or(0, |s| s.start as u64),
            detail: e.message().to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("manifest serializes");
        crate::binio::write_file(path, text.as_bytes())
    }
}

/// Everything a run trains and evaluates on, in memory.
pub struct Inputs {
    pub store: ExemplarStore,
    pub store_hash: String,
    pub source_hash: Option<String>,
    pub table: ClassTable,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Few-shot suites in `eval.tasks` order, then the in-weights suite.
    pub suites: Vec<EvalSuite>,
}

impl Inputs {
    pub fn suite(&self, split: &str) -> Option<&EvalSuite> {
        self.suites.iter().find(|s| split_name(s.kind) == split)
    }
}

/// Builds the training store from the config: generation or loading, the
/// novel/validation holdout, optional Zipf subsampling and instance
/// relabelling.
pub fn prepare_store(cfg: &ExperimentConfig) -> Result<(ExemplarStore, Option<String>)> {
    let s = &cfg.store;
    let (raw, source_hash) = match s.source {
        StoreSource::Synthetic => {
            let mut spec = cfg.synthetic_spec()?;
            spec.classes = s.classes + s.novel;
            (gen_synthetic_store(&spec)?, None)
        }
        StoreSource::File => {
            let path = s.path.as_ref().ok_or_else(|| Error::Config("store.path is not set".into()))?;
            let (store, hash) = load_store(path)?;
            (store, Some(hash))
        }
    };
    let mut store = if s.presplit {
        raw
    } else {
        let per = raw.classes().first().map_or(0, |c| c.len());
        if s.validation_per_class >= per {
            return Err(Error::Config(format!(
                "store.validation_per_class {} leaves no training exemplars of {per}",
                s.validation_per_class
            )));
        }
        split_holdout(&raw, s.novel, (per - s.validation_per_class, s.validation_per_class), s.seed)?
    };
    if s.zipf_budget > 0 {
        store = zipf_subsample(&store, cfg.zipf(), s.zipf_budget)?;
    }
    if s.instance_discrimination {
        store = instance_relabel(&store)?;
    }
    Ok((store, source_hash))
}

pub fn model_config_for(cfg: &ExperimentConfig, store: &ExemplarStore) -> ModelConfig {
    cfg.model_config(store.base_classes().len(), EmbedderConfig::for_kind(store.kind()))
}

fn presample(cfg: &ExperimentConfig, store: &ExemplarStore) -> Result<Vec<EvalSuite>> {
    let mut suites = Vec::new();
    for task in cfg.eval_tasks()? {
        suites.push(presample_suite(
            |r| build_icl_eval(store, task, r),
            SuiteKind::Icl(task),
            cfg.eval.suite_size,
            cfg.eval.seed,
        )?);
    }
    let pairs = cfg.model.pairs;
    suites.push(presample_suite(
        |r| build_iwl_eval(store, pairs, r),
        SuiteKind::Iwl { pairs },
        cfg.eval.iwl_suite_size,
        cfg.eval.seed,
    )?);
    Ok(suites)
}

/// Prepares all inputs in memory without touching the filesystem (beyond
/// reading a configured store file).
pub fn prepare(cfg: &ExperimentConfig) -> Result<Inputs> {
    cfg.validate()?;
    let (store, source_hash) = prepare_store(cfg)?;
    let store_hash = crate::store::store_hash(&store);
    let model = model_config_for(cfg, &store);
    let train = cfg.train_config(model.clone())?;
    let table = class_sampler(&store, cfg.zipf())?;
    let suites = presample(cfg, &store)?;
    Ok(Inputs {
        store,
        store_hash,
        source_hash,
        table,
        model,
        train,
        suites,
    })
}

/// Writes the prepared store, suites and manifest into `dir`.
fn write_inputs(cfg: &ExperimentConfig, inputs: &Inputs, dir: &RunDir) -> Result<Manifest> {
    let store_sha = save_store(&inputs.store, &dir.store())?;
    let mut suites = Vec::new();
    for s in &inputs.suites {
        let split = split_name(s.kind);
        let file = RunDir::suite_file(&split);
        let sha = save_suite(s, &inputs.store, &store_sha, &dir.root.join(&file))?;
        suites.push(SuiteEntry {
            split,
            file,
            sha256: sha,
            episodes: s.episodes.len(),
        });
    }
    let manifest = Manifest {
        iclforge_version: env!("CARGO_PKG_VERSION").into(),
        store_file: STORE_FILE.into(),
        store_sha256: store_sha,
        source_store_sha256: inputs.source_hash.clone(),
        label_vocab: inputs.model.label_vocab,
        parameters: inputs.model.param_count(),
        suites,
        config: cfg.clone(),
    };
    manifest.save(&dir.manifest())?;
    Ok(manifest)
}

/// Reloads a run's inputs from disk, verifying every hash in the manifest.
pub fn load_inputs(dir: &RunDir) -> Result<(Manifest, Inputs)> {
    let manifest = Manifest::load(&dir.manifest())?;
    let (store, store_hash) = load_store(&dir.root.join(&manifest.store_file))?;
    if store_hash != manifest.store_sha256 {
        return Err(Error::HashMismatch {
            what: format!("store {}", manifest.store_file),
            expected: manifest.store_sha256.clone(),
            found: store_hash,
        });
    }
    let mut suites = Vec::new();
    for e in &manifest.suites {
        let (suite, sha) = load_suite(&dir.root.join(&e.file), &store, &store_hash)?;
        if sha != e.sha256 {
            return Err(Error::HashMismatch {
                what: format!("suite {}", e.file),
                expected: e.sha256.clone(),
                found: sha,
            });
        }
        suites.push(suite);
    }
    let cfg = &manifest.config;
    let model = model_config_for(cfg, &store);
    let train = cfg.train_config(model.clone())?;
    let table = class_sampler(&store, cfg.zipf())?;
    let inputs = Inputs {
        store,
        store_hash,
        source_hash: manifest.source_store_sha256.clone(),
        table,
        model,
        train,
        suites,
    };
    Ok((manifest, inputs))
}

/// Accuracy of `model` on a suite: restricted argmax for few-shot suites,
/// full-vocabulary argmax for the in-weights suite.
pub fn evaluate_suite(model: &Model<f32>, store: &ExemplarStore, suite: &EvalSuite, full_vocab: bool) -> Result<f64> {
    Ok(match suite.kind {
        SuiteKind::Icl(_) => evaluate_icl(model, store, suite, full_vocab)?,
        SuiteKind::Iwl { .. } => evaluate_iwl(model, store, suite)?,
    })
}

/// Metric split of one probe value.
pub fn probe_split(metric: &str, layer: usize, head: usize) -> String {
    format!("probe-{metric}-L{layer}H{head}")
}

/// Runs the probe metrics on the first `cfg.probe.episodes` episodes of the
/// probe task's suite.
pub fn probe_model(cfg: &ExperimentConfig, inputs: &Inputs, model: &Model<f32>) -> Result<ProgressMetrics> {
    let task = crate::config::parse_task(&cfg.probe.task)?;
    let suite = inputs
        .suite(&task.split_name())
        .ok_or_else(|| Error::Config(format!("no suite for probe task {}", cfg.probe.task)))?;
    let n = cfg.probe.episodes.min(suite.episodes.len());
    Ok(probe_suite(model, &inputs.store, &suite.episodes[..n], cfg.probe_options())?)
}

fn record_eval(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    model: &Model<f32>,
    step: u64,
    seed: u64,
    log: &mut MetricLog,
) -> Result<()> {
    for suite in &inputs.suites {
        let acc = evaluate_suite(model, &inputs.store, suite, cfg.eval.full_vocab)?;
        log.push(step, seed, &split_name(suite.kind), acc)?;
    }
    if cfg.probe.every > 0 && step.is_multiple_of(cfg.probe.every) {
        let m = probe_model(cfg, inputs, model)?;
        for (name, values) in m.named() {
            for l in 0..values.layers {
                for h in 0..values.heads {
                    log.push(step, seed, &probe_split(name, l, h), values.get(l, h))?;
                }
            }
        }
    }
    Ok(())
}

/// Trains one seed to completion, resuming from its latest checkpoint when
/// `resume` is set and one exists. Returns the seed's metric log.
pub fn run_seed(cfg: &ExperimentConfig, inputs: &Inputs, dir: &RunDir, seed: u64, opts: RunOptions) -> Result<MetricLog> {
    let resume = opts.resume;
    let seed_dir = dir.seed_dir(seed);
    std::fs::create_dir_all(&seed_dir).map_err(|e| Error::io(&seed_dir, e))?;
    let latest = dir.latest(seed);
    let tc = &inputs.train;
    let (mut trainer, mut log, start) = if resume && latest.exists() {
        let ck = load_checkpoint(&latest)?;
        if ck.seed != seed || ck.model.config() != &inputs.model {
            return Err(Error::Config(format!(
                "{} does not belong to seed {seed} of this run",
                latest.display()
            )));
        }
        let adam = ck
            .adam
            .ok_or_else(|| Error::Config(format!("{} has no optimiser state", latest.display())))?;
        let mut log = read_metrics(&dir.seed_metrics(seed))?;
        log.truncate_after(ck.step);
        (Trainer::resume(ck.model, adam), log, ck.step)
    } else {
        let trainer = Trainer::new(Model::init(&inputs.model, seed)?);
        let mut log = MetricLog::new();
        record_eval(cfg, inputs, &trainer.model, 0, seed, &mut log)?;
        write_metrics(&log, &dir.seed_metrics(seed))?;
        save_state(dir, seed, 0, &trainer, cfg.output.snapshots)?;
        (trainer, log, 0)
    };
    let sampler = BatchSampler {
        store: &inputs.store,
        table: &inputs.table,
        mix: tc.mix,
        recipe: tc.recipe.clone(),
        pairs: tc.model.pairs,
    };
    let mut loss_sum = 0.0f64;
    let mut loss_n = 0u64;
    let last = opts.stop_after.map_or(tc.total_steps, |s| s.min(tc.total_steps));
    for step in start + 1..=last {
        let batch = sampler.batch(seed, step)?;
        let stats = match iclforge_core::train::train_step(&mut trainer, &inputs.store, &batch, step, tc) {
            Ok(s) => s,
            Err(e) => {
                let dump = seed_dir.join("abort.txt");
                let _ = std::fs::write(&dump, format!("seed {seed}\nstep {step}\n{e}\n"));
                return Err(e.into());
            }
        };
        loss_sum += f64::from(stats.loss);
        loss_n += 1;
        if step % tc.eval_every == 0 {
            log.push(step, seed, TRAIN_LOSS, loss_sum / loss_n as f64)?;
            loss_sum = 0.0;
            loss_n = 0;
            record_eval(cfg, inputs, &trainer.model, step, seed, &mut log)?;
            write_metrics(&log, &dir.seed_metrics(seed))?;
            save_state(dir, seed, step, &trainer, cfg.output.snapshots)?;
        }
    }
    Ok(log)
}

fn save_state(dir: &RunDir, seed: u64, step: u64, trainer: &Trainer, snapshot: bool) -> Result<()> {
    let mut ck = Checkpoint {
        seed,
        step,
        model: trainer.model.clone(),
        adam: Some(trainer.adam.clone()),
    };
    save_checkpoint(&ck, &dir.latest(seed))?;
    if snapshot {
        ck.adam = None;
        save_checkpoint(&ck, &dir.snapshot(seed, step))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub resume: bool,
    /// Stop after preparing inputs and writing the manifest.
    pub prepare_only: bool,
    /// Worker threads for seeds; `None` uses [`worker_threads`].
    pub threads: Option<usize>,
    /// Stop every seed after this step, as if interrupted.
    pub stop_after: Option<u64>,
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunSummary {
    pub dir: RunDir,
    pub manifest: Manifest,
    pub logs: Vec<MetricLog>,
}

/// Trains every configured seed into `cfg.output.dir`.
///
/// A fresh run refuses a directory that already holds a manifest; a resumed
/// run requires the manifest's config to equal `cfg` and all hashes to match.
pub fn train_run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = RunDir::new(&cfg.output.dir);
    let (manifest, inputs) = if opts.resume && dir.manifest().exists() {
        let (manifest, inputs) = load_inputs(&dir)?;
        if &manifest.config != cfg {
            return Err(Error::Config(format!(
                "config differs from the one recorded in {}",
                dir.manifest().display()
            )));
        }
        (manifest, inputs)
    } else {
        if dir.manifest().exists() {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --resume to continue it",
                dir.root.display()
            )));
        }
        let inputs = prepare(cfg)?;
        std::fs::create_dir_all(dir.root.join("suites")).map_err(|e| Error::io(&dir.root, e))?;
        (write_inputs(cfg, &inputs, &dir)?, inputs)
    };
    if opts.prepare_only {
        return Ok(RunSummary {
            dir,
            manifest,
            logs: Vec::new(),
        });
    }
    let threads = match opts.threads {
        Some(n) => n,
        None => worker_threads()?,
    };
    let results = parallel_map(&cfg.train.seeds, threads, |&seed| {
        run_seed(cfg, &inputs, &dir, seed, opts)
    });
    let logs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut all = MetricLog::new();
    for log in &logs {
        all.extend(log)?;
    }
    write_metrics(&all, &dir.metrics())?;
    crate::binio::write_file(&dir.aggregate(), &aggregate_csv(&aggregate_runs(&logs)?))?;
    Ok(RunSummary { dir, manifest, logs })
}
