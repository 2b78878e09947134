use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::ExemplarKind;
use crate::{Error, Result};

/// How exemplars become token embeddings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbedderConfig {
    /// Single affine map from a flat vector exemplar.
    LinearVector { input_dim: usize },
    /// Residual conv stack over a single-channel raster, then a projection.
    ConvRaster {
        height: usize,
        width: usize,
        widths: Vec<usize>,
    },
}

impl EmbedderConfig {
    pub fn conv(height: usize, width: usize) -> Self {
        EmbedderConfig::ConvRaster {
            height,
            width,
            widths: vec![64, 128, 256],
        }
    }

    /// Flat input length per exemplar.
    pub fn input_len(&self) -> usize {
        match self {
            EmbedderConfig::LinearVector { input_dim } => *input_dim,
            EmbedderConfig::ConvRaster { height, width, .. } => height * width,
        }
    }

    pub fn accepts(&self, kind: ExemplarKind) -> bool {
        match (self, kind) {
            (EmbedderConfig::LinearVector { input_dim }, ExemplarKind::Vector { dim }) => *input_dim == dim,
            (EmbedderConfig::ConvRaster { height, width, .. }, ExemplarKind::Raster { height: h, width: w }) => {
                *height == h && *width == w
            }
            _ => false,
        }
    }

    /// Matching embedder for a store's exemplar kind.
    pub fn for_kind(kind: ExemplarKind) -> Self {
        match kind {
            ExemplarKind::Vector { dim } => EmbedderConfig::LinearVector { input_dim: dim },
            ExemplarKind::Raster { height, width } => EmbedderConfig::conv(height, width),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub label_vocab: usize,
    pub pairs: usize,
    pub embedder: EmbedderConfig,
    pub init_std: f64,
}

impl ModelConfig {
    /// 3 layers, 1 head, width 64.
    pub fn probe(label_vocab: usize, pairs: usize, embedder: EmbedderConfig) -> Self {
        Self {
            layers: 3,
            heads: 1,
            embed_dim: 64,
            label_vocab,
            pairs,
            embedder,
            init_std: 0.02,
        }
    }

    /// 12 layers, 8 heads, width 64.
    pub fn full(label_vocab: usize, pairs: usize, embedder: EmbedderConfig) -> Self {
        Self {
            layers: 12,
            heads: 8,
            ..Self::probe(label_vocab, pairs, embedder)
        }
    }

    pub fn tokens(&self) -> usize {
        2 * self.pairs + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("embed-dim", self.embed_dim),
            ("label-vocab", self.label_vocab),
            ("pairs", self.pairs),
        ];
        for (name, v) in pos {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed-dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return Err(Error::Config("init-std must be positive".into()));
        }
        match &self.embedder {
            EmbedderConfig::LinearVector { input_dim } if *input_dim == 0 => {
                Err(Error::Config("input-dim must be positive".into()))
            }
            EmbedderConfig::ConvRaster { height, width, widths } => {
                if *height == 0 || *width == 0 || widths.is_empty() || widths.contains(&0) {
                    Err(Error::Config("conv embedder needs a raster size and positive widths".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Names and shapes of all parameters in canonical order.
    pub fn param_shapes(&self) -> Vec<(alloc::string::String, Vec<usize>)> {
        let d = self.embed_dim;
        let v = self.label_vocab;
        let mut out = Vec::new();
        let mut push = |n: alloc::string::String, s: Vec<usize>| out.push((n, s));
        match &self.embedder {
            EmbedderConfig::LinearVector { input_dim } => {
                push("embed.w".into(), vec![*input_dim, d]);
                push("embed.b".into(), vec![d]);
            }
            EmbedderConfig::ConvRaster { widths, .. } => {
                let mut cin = 1;
                for (b, &c) in widths.iter().enumerate() {
                    push(format!("embed.block{b}.conv1.w"), vec![9 * cin, c]);
                    push(format!("embed.block{b}.conv1.b"), vec![c]);
                    push(format!("embed.block{b}.conv2.w"), vec![9 * c, c]);
                    push(format!("embed.block{b}.conv2.b"), vec![c]);
                    push(format!("embed.block{b}.short.w"), vec![cin, c]);
                    push(format!("embed.block{b}.short.b"), vec![c]);
                    cin = c;
                }
                push("embed.proj.w".into(), vec![cin, d]);
                push("embed.proj.b".into(), vec![d]);
            }
        }
        push("label_emb".into(), vec![v, d]);
        push("pos_emb".into(), vec![self.tokens(), d]);
        for l in 0..self.layers {
            push(format!("h{l}.ln1.g"), vec![d]);
            push(format!("h{l}.ln1.b"), vec![d]);
            push(format!("h{l}.attn.qkv.w"), vec![d, 3 * d]);
            push(format!("h{l}.attn.qkv.b"), vec![3 * d]);
            push(format!("h{l}.attn.proj.w"), vec![d, d]);
            push(format!("h{l}.attn.proj.b"), vec![d]);
            push(format!("h{l}.ln2.g"), vec![d]);
            push(format!("h{l}.ln2.b"), vec![d]);
            push(format!("h{l}.mlp.fc.w"), vec![d, 4 * d]);
            push(format!("h{l}.mlp.fc.b"), vec![4 * d]);
            push(format!("h{l}.mlp.proj.w"), vec![4 * d, d]);
            push(format!("h{l}.mlp.proj.b"), vec![d]);
        }
        push("lnf.g".into(), vec![d]);
        push("lnf.b".into(), vec![d]);
        push("head.w".into(), vec![d, v]);
        push("head.b".into(), vec![v]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Number of embedder tensors at the front of the canonical order.
    pub(crate) fn embed_tensors(&self) -> usize {
        match &self.embedder {
            EmbedderConfig::LinearVector { .. } => 2,
            EmbedderConfig::ConvRaster { widths, .. } => 6 * widths.len() + 2,
        }
    }
}
