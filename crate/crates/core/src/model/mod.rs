//! Causal decoder over interleaved sample/label tokens.
//!
//! Token `2i` embeds context exemplar `i`, token `2i + 1` its label, and the
//! final token `2L` the query exemplar. Blocks are pre-norm (attention then
//! a 4x-wide GELU MLP); a final layer norm feeds an untied classifier head.

mod config;
mod conv;
mod params;
mod tape;
mod trace;

pub use config::{EmbedderConfig, ModelConfig};
pub use params::Model;
pub use tape::{BatchInput, Mode, Tape};
pub use trace::{capture_trace, embed_episode, AttentionTrace, TokenRole};
