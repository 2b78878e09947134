//! Grid sweeps: one child run per point of the class-count, swap-rate,
//! recipe and Zipf axes, followed by a comparison table.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use iclforge_core::train::{aggregate_runs, AggregateRow};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RecipeVariant, StoreSource, PROFILES};
use crate::run::{parallel_map, train_run, worker_threads, RunOptions};
use crate::{Error, Result};

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub classes: Vec<usize>,
    #[serde(default)]
    pub p_label_swap: Vec<f64>,
    #[serde(default)]
    pub recipe: Vec<RecipeName>,
    #[serde(default)]
    pub zipf: Vec<f64>,
}

/// Named training recipes of the recipe axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeName {
    Standard,
    Bursty,
    BurstyCopy,
    BurstyLow,
    BurstyLowCopy,
}

impl RecipeName {
    pub fn as_str(self) -> &'static str {
        match self {
            RecipeName::Standard => "standard",
            RecipeName::Bursty => "bursty",
            RecipeName::BurstyCopy => "bursty-copy",
            RecipeName::BurstyLow => "bursty-low",
            RecipeName::BurstyLowCopy => "bursty-low-copy",
        }
    }

    /// Sets the recipe section of `cfg`; burst formats are sized to the
    /// model's context.
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        let pairs = cfg.model.pairs;
        let (variant, high, copy) = match self {
            RecipeName::Standard => (RecipeVariant::Standard, true, false),
            RecipeName::Bursty => (RecipeVariant::Bursty, true, false),
            RecipeName::BurstyCopy => (RecipeVariant::Bursty, true, true),
            RecipeName::BurstyLow => (RecipeVariant::Bursty, false, false),
            RecipeName::BurstyLowCopy => (RecipeVariant::Bursty, false, true),
        };
        cfg.recipe.variant = variant;
        cfg.recipe.format = burst_format(high, pairs);
        cfg.recipe.inst_copy = copy;
        cfg.recipe.inst_copy_prob = if copy { 1.0 } else { 0.0 };
    }
}

/// `3xQ-3xA-B-...` (high) or `Q-A-B-...` (low) filling `pairs` slots.
pub fn burst_format(high: bool, pairs: usize) -> String {
    let mut s = String::new();
    let (mut used, mut letter) = (0, 0u32);
    let group = |s: &mut String, n: usize, name: String| {
        if !s.is_empty() {
            s.push('-');
        }
        if n > 1 {
            let _ = write!(s, "{n}x");
        }
        s.push_str(&name);
    };
    let (q, a) = if high && pairs >= 6 { (3, 3) } else { (1, 0) };
    group(&mut s, q, "Q".into());
    used += q;
    if a > 0 {
        group(&mut s, a, "A".into());
        used += a;
        letter = 1;
    }
    while used < pairs {
        let name = if letter < 26 {
            char::from(b'A' + letter as u8).to_string()
        } else {
            format!("D{letter}")
        };
        group(&mut s, 1, name);
        letter += 1;
        used += 1;
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Profile name or config path (relative to the sweep file).
    pub base: String,
    /// Directory receiving one child run per grid point.
    pub dir: PathBuf,
    pub axes: SweepAxes,
    /// Overrides merged into the base config before the grid is applied,
    /// e.g. `train.total_steps = 2000`.
    #[serde(default)]
    pub set: toml::Table,
}

/// Recursively merges `over` into `base`.
pub fn merge_tables(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Applies overrides to a config by merging them into its TOML form.
pub fn apply_overrides(cfg: &ExperimentConfig, over: &toml::Table) -> Result<ExperimentConfig> {
    let mut table: toml::Table = toml::from_str(&cfg.to_toml()).expect("config round-trips");
    merge_tables(&mut table, over);
    let text = toml::to_string(&table).expect("table serializes");
    ExperimentConfig::parse(&text)
}

/// Parses a `section.key=value` override; values that are not valid TOML
/// are taken as strings.
pub fn parse_override(s: &str) -> Result<toml::Table> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    let value = value.trim();
    let literal = if toml::from_str::<toml::Table>(&format!("v = {value}")).is_ok() {
        value.to_string()
    } else {
        toml::Value::String(value.into()).to_string()
    };
    toml::from_str(&format!("{} = {literal}", key.trim())).map_err(|e| Error::Config(format!("override {s:?}: {e}")))
}

/// One grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Child {
    pub name: String,
    pub classes: Option<usize>,
    pub p_label_swap: Option<f64>,
    pub recipe: Option<RecipeName>,
    pub zipf: Option<f64>,
    pub config: ExperimentConfig,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let is_profile = PROFILES.iter().any(|(n, _)| *n == cfg.base);
        if !is_profile && Path::new(&cfg.base).is_relative() {
            cfg.base = dir.join(&cfg.base).to_string_lossy().into_owned();
        }
        if cfg.dir.is_relative() {
            cfg.dir = dir.join(&cfg.dir);
        }
        Ok(cfg)
    }

    /// Expands the grid into child configs, in axis order.
    pub fn children(&self) -> Result<Vec<Child>> {
        let base = apply_overrides(&ExperimentConfig::load(Path::new(&self.base))?, &self.set)?;
        let a = &self.axes;
        if !a.classes.is_empty() && base.store.source != StoreSource::Synthetic {
            return Err(Error::Config("the classes axis needs a synthetic store".into()));
        }
        if a.classes.contains(&0) || a.p_label_swap.iter().chain(&a.zipf).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("sweep axis values must be non-negative and class counts positive".into()));
        }
        let mut out = Vec::new();
        for classes in axis(&a.classes) {
            for swap in axis(&a.p_label_swap) {
                for recipe in axis(&a.recipe) {
                    for zipf in axis(&a.zipf) {
                        let mut cfg = base.clone();
                        let mut parts = Vec::new();
                        if let Some(c) = classes {
                            cfg.store.classes = c;
                            parts.push(format!("classes-{c}"));
                        }
                        if let Some(p) = swap {
                            cfg.mix.p_label_swap = p;
                            parts.push(format!("swap-{p}"));
                        }
                        if let Some(r) = recipe {
                            r.apply(&mut cfg);
                            parts.push(r.as_str().to_string());
                        }
                        if let Some(z) = zipf {
                            cfg.store.zipf = z;
                            parts.push(format!("zipf-{z}"));
                        }
                        let name = if parts.is_empty() { "base".into() } else { parts.join("_") };
                        cfg.output.dir = self.dir.join(&name);
                        cfg.validate()?;
                        out.push(Child {
                            name,
                            classes,
                            p_label_swap: swap,
                            recipe,
                            zipf,
                            config: cfg,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Outcome of one child run.
#[derive(Debug)]
pub struct ChildResult {
    pub child: Child,
    pub outcome: std::result::Result<Vec<AggregateRow>, String>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Comparison table: per child and split, the final and peak seed-mean.
pub fn sweep_csv(results: &[ChildResult]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "child",
        "classes",
        "p_label_swap",
        "recipe",
        "zipf",
        "status",
        "split",
        "final_step",
        "final_mean",
        "peak_step",
        "peak_mean",
    ])
    .expect("in-memory CSV");
    for r in results {
        let c = &r.child;
        let head = [
            c.name.clone(),
            opt(c.classes),
            opt(c.p_label_swap),
            opt(c.recipe.map(RecipeName::as_str)),
            opt(c.zipf),
        ];
        match &r.outcome {
            Err(msg) => {
                let mut row = head.to_vec();
                row.push(format!("failed: {msg}"));
                row.extend(std::iter::repeat_n(String::new(), 5));
                w.write_record(&row).expect("in-memory CSV");
            }
            Ok(rows) => {
                let mut splits: Vec<&str> = rows.iter().map(|r| r.split.as_str()).collect();
                splits.sort_unstable();
                splits.dedup();
                for split in splits {
                    let series: Vec<&AggregateRow> = rows.iter().filter(|r| r.split == split).collect();
                    let last = series.iter().max_by_key(|r| r.step).expect("non-empty series");
                    let peak = series
                        .iter()
                        .fold(series[0], |best, r| if r.mean > best.mean { r } else { best });
                    let mut row = head.to_vec();
                    row.extend([
                        "ok".to_string(),
                        split.to_string(),
                        last.step.to_string(),
                        last.mean.to_string(),
                        peak.step.to_string(),
                        peak.mean.to_string(),
                    ]);
                    w.write_record(&row).expect("in-memory CSV");
                }
            }
        }
    }
    w.into_inner().expect("in-memory CSV")
}

/// Runs every child, writes `sweep.csv` into the sweep directory and fails
/// with [`Error::Sweep`] if any child failed.
pub fn run_sweep(sweep: &SweepConfig, resume: bool) -> Result<Vec<ChildResult>> {
    let children = sweep.children()?;
    std::fs::create_dir_all(&sweep.dir).map_err(|e| Error::io(&sweep.dir, e))?;
    let threads = worker_threads()?;
    let outer = threads.min(children.len()).max(1);
    let inner = (threads / outer).max(1);
    let results = parallel_map(&children, outer, |child| {
        let opts = RunOptions {
            resume,
            threads: Some(inner),
            ..RunOptions::default()
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| train_run(&child.config, opts)))
            .map_err(|p| {
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into())
            })
            .and_then(|r| r.map_err(|e| e.to_string()))
            .and_then(|summary| aggregate_runs(&summary.logs).map_err(|e| e.to_string()));
        if let Err(msg) = &outcome {
            eprintln!("sweep child {} failed: {msg}", child.name);
            let _ = std::fs::create_dir_all(&child.config.output.dir);
            let _ = std::fs::write(child.config.output.dir.join("error.txt"), format!("{msg}\n"));
        }
        ChildResult {
            child: child.clone(),
            outcome,
        }
    });
    crate::binio::write_file(&sweep.dir.join(SWEEP_FILE), &sweep_csv(&results))?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        return Err(Error::Sweep {
            failed,
            total: results.len(),
        });
    }
    Ok(results)
}
