//! Exemplar stores: generation, holdout splitting, class-frequency tables and
//! instance-discrimination relabeling.

mod sampler;
mod split;
mod store;
mod synth;

pub use sampler::{class_sampler, zipf_subsample, ClassTable, ZipfSpec};
pub use split::{instance_relabel, split_holdout};
pub use store::{ClassRecord, ExemplarData, ExemplarKind, ExemplarRef, ExemplarStore, Split};
pub use synth::{gen_synthetic_store, SyntheticKind, SyntheticSpec};
