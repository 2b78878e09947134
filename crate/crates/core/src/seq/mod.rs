//! Training and evaluation sequence construction.
//!
//! An episode is `L` (exemplar, label) context pairs followed by a query
//! exemplar; the model sees `2L + 1` tokens and predicts the query label.

mod build;
mod episode;
mod recipe;
mod suite;

pub use build::{
    apply_inst_copy, apply_label_swap, build_bursty, build_icl_eval, build_iwl_eval, build_standard,
    sample_training_batch, BatchSampler,
};
pub use episode::{Episode, EpisodeKind, Provenance};
pub use recipe::{BurstFormat, EvalTask, Recipe, TrainingMix, Variant};
pub use suite::{presample_suite, EvalSuite, SuiteKind};
