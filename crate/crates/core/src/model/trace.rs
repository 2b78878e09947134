use alloc::vec::Vec;

use super::params::Model;
use super::tape::{BatchInput, Mode, Tape};
use crate::data::ExemplarStore;
use crate::seq::Episode;
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenRole {
    Sample,
    Label,
    Query,
}

impl TokenRole {
    /// Roles of the `2L + 1` positions of an `L`-pair episode.
    pub fn layout(pairs: usize) -> Vec<TokenRole> {
        (0..2 * pairs + 1)
            .map(|p| {
                if p == 2 * pairs {
                    TokenRole::Query
                } else if p % 2 == 0 {
                    TokenRole::Sample
                } else {
                    TokenRole::Label
                }
            })
            .collect()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TokenRole::Sample => "sample",
            TokenRole::Label => "label",
            TokenRole::Query => "query",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sample" => TokenRole::Sample,
            "label" => TokenRole::Label,
            "query" => TokenRole::Query,
            _ => return None,
        })
    }
}

/// Per-block, per-head `[T, T]` attention for one episode plus token roles.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    layers: usize,
    heads: usize,
    tokens: usize,
    weights: Vec<f32>,
    roles: Vec<TokenRole>,
}

impl AttentionTrace {
    pub fn new(layers: usize, heads: usize, roles: Vec<TokenRole>, weights: Vec<f32>) -> Result<Self> {
        let t = roles.len();
        if layers == 0 || heads == 0 || t == 0 || weights.len() != layers * heads * t * t {
            return Err(Error::shape(
                "attention_trace",
                alloc::format!("{} weights for {layers}x{heads} heads over {t} tokens", weights.len()),
            ));
        }
        Ok(Self {
            layers,
            heads,
            tokens: t,
            weights,
            roles,
        })
    }

    /// Copies episode `b` out of a Full-mode tape. With `pre_softmax` the
    /// scaled QK scores are kept instead of the probabilities.
    pub fn from_tape<F: Real>(tape: &Tape<F>, b: usize, layers: usize, heads: usize, pre_softmax: bool) -> Self {
        let t = tape.logit_rows();
        let mut weights = Vec::with_capacity(layers * heads * t * t);
        for l in 0..layers {
            for h in 0..heads {
                if pre_softmax {
                    weights.extend(tape.scores(b, l, h, heads).iter().map(|v| v.to_f32()));
                } else {
                    weights.extend(tape.attention(b, l, h, heads).iter().map(|v| v.to_f32()));
                }
            }
        }
        Self {
            layers,
            heads,
            tokens: t,
            weights,
            roles: TokenRole::layout((t - 1) / 2),
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn roles(&self) -> &[TokenRole] {
        &self.roles
    }

    /// `[T, T]` matrix of block `l`, head `h`.
    pub fn matrix(&self, l: usize, h: usize) -> &[f32] {
        let sz = self.tokens * self.tokens;
        let off = (l * self.heads + h) * sz;
        &self.weights[off..off + sz]
    }

    pub fn weight(&self, l: usize, h: usize, row: usize, col: usize) -> f32 {
        self.matrix(l, h)[row * self.tokens + col]
    }

    pub fn raw(&self) -> &[f32] {
        &self.weights
    }
}

/// Full-mode forward of one episode: its trace and all logits `[T, vocab]`.
pub fn capture_trace<F: Real>(
    model: &Model<F>,
    store: &ExemplarStore,
    episode: &Episode,
) -> Result<(AttentionTrace, Tensor<F>)> {
    let input = BatchInput::from_episodes(store, core::slice::from_ref(episode))?;
    let mut tape = Tape::new();
    model.forward(&input, Mode::Full, &mut tape)?;
    let cfg = model.config();
    let trace = AttentionTrace::from_tape(&tape, 0, cfg.layers, cfg.heads, false);
    let logits = Tensor::new(&[cfg.tokens(), cfg.label_vocab], tape.logits().to_vec())?;
    Ok((trace, logits))
}

/// Token embeddings `[2L + 1, d]` (exemplar or label embedding plus position).
pub fn embed_episode<F: Real>(model: &Model<F>, store: &ExemplarStore, episode: &Episode) -> Result<Tensor<F>> {
    let cfg = model.config();
    if !cfg.embedder.accepts(store.kind()) {
        return Err(Error::shape("embed_episode", "store exemplars do not match the embedder"));
    }
    let input = BatchInput::from_episodes(store, core::slice::from_ref(episode))?;
    let mut tape = Tape::new();
    model.forward(&input, Mode::LastToken, &mut tape)?;
    Tensor::new(&[cfg.tokens(), cfg.embed_dim], tape.embedded().to_vec())
}
