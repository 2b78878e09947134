use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::config::TrainConfig;
use crate::data::ExemplarStore;
use crate::model::{BatchInput, Mode, Model, Tape};
use crate::optim::{adam_step, clip_global_norm, AdamState};
use crate::seq::Episode;
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f32,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

/// Model, optimiser state and reusable buffers of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState,
    tape: Tape<f32>,
    grads: Vec<Tensor>,
}

fn provenance(batch: &[Episode]) -> String {
    let mut s = String::new();
    for (i, ep) in batch.iter().enumerate() {
        let p = ep.provenance;
        let _ = write!(
            s,
            "{}slot {i}: {:?} swapped={} copies={} target={}",
            if i > 0 { "; " } else { "" },
            p.kind,
            p.swapped,
            p.inst_copy,
            ep.target
        );
    }
    s
}

impl Trainer {
    pub fn new(model: Model<f32>) -> Self {
        let adam = AdamState::new(model.params());
        Self::resume(model, adam)
    }

    pub fn resume(model: Model<f32>, adam: AdamState) -> Self {
        let grads = model.zero_grads();
        Self {
            model,
            adam,
            tape: Tape::new(),
            grads,
        }
    }

    /// Completed optimiser updates.
    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    /// Mean last-token cross-entropy over `batch`, clipped gradient, Adam
    /// update at `lr`. A non-finite loss aborts without touching the model.
    pub fn step(&mut self, store: &ExemplarStore, batch: &[Episode], lr: f64, clip: f64) -> Result<StepStats> {
        let input = BatchInput::from_episodes(store, batch)?;
        let targets: Vec<u32> = batch.iter().map(|e| e.target).collect();
        let step = self.adam.step + 1;
        let fwd = self.model.forward(&input, Mode::LastToken, &mut self.tape);
        if let Err(Error::NonFinite { context }) = fwd {
            return Err(Error::non_finite(format!(
                "step {step}: {context}; batch: {}",
                provenance(batch)
            )));
        }
        fwd?;
        let (loss, dlogits) = self.tape.last_token_loss(&targets)?;
        if !loss.is_finite() {
            return Err(Error::non_finite(format!(
                "step {step}: loss {loss}; batch: {}",
                provenance(batch)
            )));
        }
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
        self.model.backward(&self.tape, &dlogits, &mut self.grads)?;
        let grad_norm = clip_global_norm(&mut self.grads, clip as f32);
        adam_step(self.model.params_mut(), &self.grads, &mut self.adam, lr as f32).map_err(|e| {
            Error::non_finite(format!("step {step}: {e}; batch: {}", provenance(batch)))
        })?;
        Ok(StepStats { loss, grad_norm, lr })
    }
}

/// One update at `lr_at(step)`; `step` is 1-based.
pub fn train_step(
    trainer: &mut Trainer,
    store: &ExemplarStore,
    batch: &[Episode],
    step: u64,
    config: &TrainConfig,
) -> Result<StepStats> {
    if batch.len() != config.mix.batch_size {
        return Err(Error::Config(format!(
            "batch of {} episodes, config expects {}",
            batch.len(),
            config.mix.batch_size
        )));
    }
    trainer.step(store, batch, config.lr_at(step), config.clip_norm)
}
