//! Experiment configuration: a sectioned TOML file resolved into the core
//! store, recipe, model and training types.

use std::path::{Path, PathBuf};

use iclforge_core::data::{SyntheticKind, SyntheticSpec, ZipfSpec};
use iclforge_core::model::{EmbedderConfig, ModelConfig};
use iclforge_core::probe::{DiagVariant, ProbeOptions};
use iclforge_core::seq::{BurstFormat, EvalTask, Recipe, TrainingMix, Variant};
use iclforge_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Built-in profiles, selectable by name wherever a config path is accepted.
pub const PROFILES: [(&str, &str); 2] = [
    ("paper-defaults", include_str!("../profiles/paper-defaults.toml")),
    ("desk-scale", include_str!("../profiles/desk-scale.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub store: StoreSection,
    pub recipe: RecipeSection,
    pub mix: MixSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub probe: ProbeSection,
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoreSource {
    Synthetic,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Gaussian,
    Glyph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    pub source: StoreSource,
    /// EXB1 file, used when `source = "file"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub kind: SynthKind,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    pub seed: u64,
    /// Classes held out for few-shot evaluation.
    pub novel: usize,
    pub validation_per_class: usize,
    /// When true the store is used as given: no holdout split is applied.
    pub presplit: bool,
    pub zipf: f64,
    /// Training-exemplar budget for Zipf subsampling; 0 keeps every exemplar.
    pub zipf_budget: usize,
    pub instance_discrimination: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeVariant {
    Standard,
    Bursty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSection {
    pub variant: RecipeVariant,
    /// Burst pattern such as `3xQ-3xA-B-C`.
    pub format: String,
    pub inst_copy: bool,
    pub inst_copy_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSection {
    pub p_bursty: f64,
    pub p_label_swap: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub pairs: usize,
    pub init_std: f64,
    /// Output channels of each conv stage for raster stores.
    pub conv_widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub max_lr: f64,
    pub clip_norm: f64,
    pub eval_every: u64,
    pub seeds: Vec<u64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Few-shot tasks written `<k>w<n>s`, e.g. `2w4s`.
    pub tasks: Vec<String>,
    pub suite_size: usize,
    pub iwl_suite_size: usize,
    pub seed: u64,
    pub full_vocab: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagMode {
    Nearest,
    AllImages,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    /// Probe cadence in steps (a multiple of `eval_every`); 0 disables.
    pub every: u64,
    /// Task whose suite is traced.
    pub task: String,
    pub episodes: usize,
    pub diag: DiagMode,
    pub pre_softmax: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Keep a model-only checkpoint at every evaluation step.
    pub snapshots: bool,
}

/// Parses `<k>w<n>s`.
pub fn parse_task(s: &str) -> Result<EvalTask> {
    let bad = || Error::Config(format!("task {s:?} is not of the form <k>w<n>s"));
    let (k, n) = s.strip_suffix('s').and_then(|r| r.split_once('w')).ok_or_else(bad)?;
    let ways = k.parse::<usize>().map_err(|_| bad())?;
    let shots = n.parse::<usize>().map_err(|_| bad())?;
    if ways < 2 || shots == 0 {
        return Err(bad());
    }
    Ok(EvalTask { ways, shots })
}

pub fn task_name(t: EvalTask) -> String {
    format!("{}w{}s", t.ways, t.shots)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, or a built-in profile when `name_or_path` names
    /// one and no such file exists. Relative store paths resolve against the
    /// config file's directory.
    pub fn load(name_or_path: &Path) -> Result<Self> {
        if !name_or_path.exists() {
            if let Some((_, text)) = PROFILES.iter().find(|(n, _)| Path::new(n) == name_or_path) {
                return Self::parse(text);
            }
        }
        let text = std::fs::read_to_string(name_or_path).map_err(|e| Error::io(name_or_path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.store.path, name_or_path.parent()) {
            if p.is_relative() {
                cfg.store.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn profile(name: &str) -> Result<Self> {
        let (_, text) = PROFILES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown profile {name:?}")))?;
        Self::parse(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.store;
        check(s.source == StoreSource::Synthetic || s.path.is_some(), || {
            "store.path is required when store.source = \"file\"".into()
        })?;
        if s.source == StoreSource::Synthetic {
            self.synthetic_spec().map(|_| ())?;
        }
        check((0.0..=1.0).contains(&self.recipe.inst_copy_prob), || {
            "recipe.inst_copy_prob must lie in [0, 1]".into()
        })?;
        check(s.zipf >= 0.0 && s.zipf.is_finite(), || "store.zipf must be non-negative".into())?;
        self.recipe()?.validate(self.model.pairs)?;
        self.mix().validate()?;
        check(self.train.adam_beta1 == 0.9 && self.train.adam_beta2 == 0.99 && self.train.adam_eps == 1e-8, || {
            "the optimiser is fixed at betas (0.9, 0.99) and eps 1e-8".into()
        })?;
        check(!self.train.seeds.is_empty(), || "train.seeds is empty".into())?;
        let mut seeds = self.train.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        check(seeds.len() == self.train.seeds.len(), || "train.seeds has duplicates".into())?;
        check(self.train.total_steps > 0 && self.train.eval_every > 0, || {
            "train.total_steps and train.eval_every must be positive".into()
        })?;
        check(self.train.total_steps.is_multiple_of(self.train.eval_every), || {
            "train.total_steps must be a multiple of train.eval_every".into()
        })?;
        check(self.train.warmup_steps > 0 && self.train.warmup_steps <= self.train.total_steps, || {
            "train.warmup_steps must lie in 1..=total_steps".into()
        })?;
        check(self.train.max_lr > 0.0 && self.train.clip_norm > 0.0, || {
            "train.max_lr and train.clip_norm must be positive".into()
        })?;
        check(!self.eval.tasks.is_empty(), || "eval.tasks is empty".into())?;
        for t in self.eval_tasks()? {
            check(t.pairs() == self.model.pairs, || {
                format!("task {} needs {} pairs, model has {}", task_name(t), t.pairs(), self.model.pairs)
            })?;
        }
        check(self.eval.suite_size > 0 && self.eval.iwl_suite_size > 0, || {
            "eval suite sizes must be positive".into()
        })?;
        let p = &self.probe;
        check(p.every.is_multiple_of(self.train.eval_every), || {
            "probe.every must be a multiple of train.eval_every".into()
        })?;
        if p.every > 0 {
            check(p.episodes > 0, || "probe.episodes must be positive".into())?;
            let t = parse_task(&p.task)?;
            check(self.eval_tasks()?.contains(&t), || format!("probe.task {} is not in eval.tasks", p.task))?;
        }
        let m = &self.model;
        check(m.layers > 0 && m.heads > 0 && m.pairs > 0, || {
            "model.layers, model.heads and model.pairs must be positive".into()
        })?;
        check(m.embed_dim > 0 && m.embed_dim.is_multiple_of(m.heads), || {
            format!("model.embed_dim {} is not divisible by model.heads {}", m.embed_dim, m.heads)
        })?;
        check(m.init_std > 0.0 && m.init_std.is_finite(), || "model.init_std must be positive".into())?;
        Ok(())
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let s = &self.store;
        let kind = match s.kind {
            SynthKind::Gaussian => SyntheticKind::GaussianPrototype { dim: s.dim },
            SynthKind::Glyph => SyntheticKind::ProceduralGlyph {
                height: s.height,
                width: s.width,
            },
        };
        Ok(SyntheticSpec {
            classes: s.classes,
            per_class: s.per_class,
            kind,
            noise: s.noise,
            seed: s.seed,
        })
    }

    pub fn zipf(&self) -> ZipfSpec {
        ZipfSpec {
            coefficient: self.store.zipf,
        }
    }

    pub fn recipe(&self) -> Result<Recipe> {
        let r = &self.recipe;
        let format: BurstFormat = r.format.parse()?;
        Ok(Recipe {
            variant: match r.variant {
                RecipeVariant::Standard => Variant::Standard,
                RecipeVariant::Bursty => Variant::Bursty,
            },
            format,
            inst_copy: r.inst_copy,
            inst_copy_prob: if r.inst_copy { r.inst_copy_prob } else { 0.0 },
        })
    }

    pub fn mix(&self) -> TrainingMix {
        TrainingMix {
            p_bursty: self.mix.p_bursty,
            p_label_swap: self.mix.p_label_swap,
            batch_size: self.mix.batch_size,
        }
    }

    pub fn eval_tasks(&self) -> Result<Vec<EvalTask>> {
        self.eval.tasks.iter().map(|t| parse_task(t)).collect()
    }

    pub fn probe_options(&self) -> ProbeOptions {
        ProbeOptions {
            diag: match self.probe.diag {
                DiagMode::Nearest => DiagVariant::NearestSample,
                DiagMode::AllImages => DiagVariant::AllImages,
            },
            pre_softmax: self.probe.pre_softmax,
        }
    }

    /// Model config for a store with `label_vocab` base classes and the
    /// given embedder.
    pub fn model_config(&self, label_vocab: usize, mut embedder: EmbedderConfig) -> ModelConfig {
        if let EmbedderConfig::ConvRaster { widths, .. } = &mut embedder {
            if !self.model.conv_widths.is_empty() {
                widths.clone_from(&self.model.conv_widths);
            }
        }
        ModelConfig {
            layers: self.model.layers,
            heads: self.model.heads,
            embed_dim: self.model.embed_dim,
            label_vocab,
            pairs: self.model.pairs,
            embedder,
            init_std: self.model.init_std,
        }
    }

    pub fn train_config(&self, model: ModelConfig) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            total_steps: t.total_steps,
            warmup_steps: t.warmup_steps,
            max_lr: t.max_lr,
            clip_norm: t.clip_norm,
            eval_every: t.eval_every,
            seeds: t.seeds.clone(),
            mix: self.mix(),
            recipe: self.recipe()?,
            model,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
