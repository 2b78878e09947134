//! Optimisation schedule, the training step, evaluation and metric logs.

mod config;
mod eval;
mod metrics;
mod step;

pub use config::{lr_at, TrainConfig};
pub use eval::{count_correct, evaluate_icl, evaluate_iwl, predict, Prediction, EVAL_CHUNK};
pub use metrics::{aggregate_runs, AggregateRow, MetricLog, MetricRow};
pub use step::{train_step, StepStats, Trainer};
