use alloc::string::String;
use alloc::vec::Vec;

use super::config::ModelConfig;
use crate::rng::purpose;
use crate::{Error, Real, Result, RngStream, Tensor};

pub(crate) const PER_LAYER: usize = 12;

/// Offsets of one block's tensors inside [`PER_LAYER`].
pub(crate) mod slot {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const QKV_W: usize = 2;
    pub const QKV_B: usize = 3;
    pub const PROJ_W: usize = 4;
    pub const PROJ_B: usize = 5;
    pub const LN2_G: usize = 6;
    pub const LN2_B: usize = 7;
    pub const FC_W: usize = 8;
    pub const FC_B: usize = 9;
    pub const MLP_W: usize = 10;
    pub const MLP_B: usize = 11;
}

/// Positions of the fixed tensors in the canonical order.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub embed: usize,
    pub label: usize,
    pub pos: usize,
    pub layer0: usize,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w: usize,
    pub head_b: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let label = cfg.embed_tensors();
        let layer0 = label + 2;
        let lnf_g = layer0 + PER_LAYER * cfg.layers;
        Self {
            embed: 0,
            label,
            pos: label + 1,
            layer0,
            lnf_g,
            lnf_b: lnf_g + 1,
            head_w: lnf_g + 2,
            head_b: lnf_g + 3,
        }
    }

    pub fn layer(&self, l: usize, s: usize) -> usize {
        self.layer0 + PER_LAYER * l + s
    }
}

/// The causal sample/label transformer: configuration plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<F = f32> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<F>>,
}

fn is_gain(name: &str) -> bool {
    name.ends_with(".g")
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b")
}

impl<F: Real> Model<F> {
    /// Weights truncated-normal at `init_std` (cut at two std), biases zero,
    /// layer-norm gains one. Tensor `i` draws from its own stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (i, (name, shape)) in config.param_shapes().into_iter().enumerate() {
            let t = if is_gain(&name) {
                Tensor::from_fn(&shape, |_| F::ONE)
            } else if is_bias(&name) {
                Tensor::zeros(&shape)
            } else {
                let mut rng = RngStream::derive(seed, &[purpose::INIT, i as u64]);
                Tensor::from_fn(&shape, |_| F::from_f64(rng.truncated_normal(config.init_std)))
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config: config.clone(),
            names,
            params,
        })
    }

    /// Builds a model from named tensors, which must match the config exactly.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if named.len() != shapes.len() {
            return Err(Error::Config(alloc::format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((name, shape), (n, t)) in shapes.into_iter().zip(named) {
            if n != name || t.shape() != shape.as_slice() {
                return Err(Error::Config(alloc::format!(
                    "parameter {n:?} {:?} does not match expected {name:?} {shape:?}",
                    t.shape()
                )));
            }
            t.check_finite(&n)?;
            names.push(n);
            params.push(t);
        }
        Ok(Self {
            config: config.clone(),
            names,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.len()).sum()
    }

    /// Zero tensors shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Tensor<F>> {
        self.params.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|t| t.all_finite())
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|t| t.cast()).collect(),
        }
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }
}
