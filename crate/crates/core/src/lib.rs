//! Allocation-only core of `iclforge`.
//!
//! Everything in this crate is a pure function of its inputs: dense numerics
//! with hand-written adjoints, the causal sample/label transformer, exemplar
//! stores, episodic sequence construction, the training step and evaluation,
//! attention-probe metrics and n-gram repetition counting. File formats, run
//! orchestration and the command line live in the `iclforge` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
mod error;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod ngram;
pub mod ops;
pub mod optim;
pub mod probe;
mod real;
pub mod rng;
pub mod seq;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use rng::RngStream;
pub use tensor::Tensor;
