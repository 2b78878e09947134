use alloc::format;
use alloc::vec::Vec;

use crate::model::ModelConfig;
use crate::seq::{Recipe, TrainingMix};
use crate::{Error, Result};

/// Everything that determines a training run apart from its seed and data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub max_lr: f64,
    pub clip_norm: f64,
    pub eval_every: u64,
    pub seeds: Vec<u64>,
    pub mix: TrainingMix,
    pub recipe: Recipe,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Optimiser defaults: 15k warmup, peak 6e-4, clipping at 1.0.
    pub fn new(model: ModelConfig, recipe: Recipe, total_steps: u64) -> Self {
        Self {
            total_steps,
            warmup_steps: 15_000.min(total_steps),
            max_lr: 6e-4,
            clip_norm: 1.0,
            eval_every: 1_000,
            seeds: alloc::vec![0],
            mix: TrainingMix::default(),
            recipe,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mix.validate()?;
        self.recipe.validate(self.model.pairs)?;
        if self.total_steps == 0 || self.warmup_steps == 0 || self.eval_every == 0 {
            return Err(Error::Config("step counts must be positive".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup {} exceeds total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.max_lr > 0.0) || !(self.clip_norm > 0.0) || !self.max_lr.is_finite() || !self.clip_norm.is_finite()
        {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(step, self.warmup_steps, self.max_lr)
    }
}

/// Linear warmup to `max_lr`, then decay as `sqrt(warmup / step)`.
pub fn lr_at(step: u64, warmup: u64, max_lr: f64) -> f64 {
    if step == 0 || warmup == 0 {
        return 0.0;
    }
    let r = step as f64 / warmup as f64;
    max_lr * r.min(libm::sqrt(1.0 / r))
}
