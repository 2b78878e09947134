//! File formats, experiment runs and the command line for `iclforge`.
//!
//! The numerical work lives in [`iclforge_core`]; this crate adds the EXB1
//! exemplar store, ICLF checkpoint and ICLS suite formats, CSV tables,
//! experiment configs, run directories, sweeps and the `iclforge` binary.

pub mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csvio;
mod error;
pub mod run;
pub mod store;
pub mod suite;
pub mod sweep;
pub mod tokens;
pub mod trace;

pub use binio::sha256_hex;
pub use error::{Error, Result};
pub use iclforge_core as core;
