//! ICLF checkpoint files: model config, named parameter tensors and,
//! optionally, the optimiser moments needed to resume training.

use std::path::Path;

use iclforge_core::model::{EmbedderConfig, Model, ModelConfig};
use iclforge_core::optim::AdamState;
use iclforge_core::Tensor;

use crate::binio::{read_file, sha256_hex, write_file, Reader, Writer};
use crate::Result;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ICLF";
pub const CHECKPOINT_VERSION: u32 = 1;

const FIRST_MOMENT: &str = "adam.m/";
const SECOND_MOMENT: &str = "adam.v/";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub seed: u64,
    /// Completed optimiser steps.
    pub step: u64,
    pub model: Model<f32>,
    pub adam: Option<AdamState>,
}

fn write_config(w: &mut Writer, c: &ModelConfig) {
    for v in [c.layers, c.heads, c.embed_dim, c.label_vocab, c.pairs] {
        w.u32(v as u32);
    }
    w.f64(c.init_std);
    match &c.embedder {
        EmbedderConfig::LinearVector { input_dim } => {
            w.u8(0);
            w.u32(*input_dim as u32);
        }
        EmbedderConfig::ConvRaster { height, width, widths } => {
            w.u8(1);
            w.u32(*height as u32);
            w.u32(*width as u32);
            w.u32(widths.len() as u32);
            for &x in widths {
                w.u32(x as u32);
            }
        }
    }
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let layers = r.u32("layers")? as usize;
    let heads = r.u32("heads")? as usize;
    let embed_dim = r.u32("embed dim")? as usize;
    let label_vocab = r.u32("label vocab")? as usize;
    let pairs = r.u32("pairs")? as usize;
    let init_std = r.f64("init std")?;
    let at = r.pos();
    let embedder = match r.u8("embedder tag")? {
        0 => EmbedderConfig::LinearVector {
            input_dim: r.u32("input dim")? as usize,
        },
        1 => {
            let height = r.u32("height")? as usize;
            let width = r.u32("width")? as usize;
            let n = r.u32("width count")? as usize;
            if n > 64 {
                return Err(r.error_at(at, format!("{n} conv stages")));
            }
            let widths = (0..n)
                .map(|_| r.u32("conv width").map(|v| v as usize))
                .collect::<Result<_>>()?;
            EmbedderConfig::ConvRaster { height, width, widths }
        }
        t => return Err(r.error_at(at, format!("unknown embedder tag {t}"))),
    };
    let cfg = ModelConfig {
        layers,
        heads,
        embed_dim,
        label_vocab,
        pairs,
        embedder,
        init_std,
    };
    cfg.validate().map_err(|e| r.error_at(8, e.to_string()))?;
    Ok(cfg)
}

fn write_tensor(w: &mut Writer, name: &str, t: &Tensor) {
    w.string(name);
    w.u32(t.shape().len() as u32);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    w.f32s(t.data());
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    write_config(&mut w, ck.model.config());
    w.u64(ck.seed);
    w.u64(ck.step);
    let names = ck.model.names();
    let n = names.len() * if ck.adam.is_some() { 3 } else { 1 };
    w.u32(n as u32);
    for (name, t) in names.iter().zip(ck.model.params()) {
        write_tensor(&mut w, name, t);
    }
    if let Some(a) = &ck.adam {
        for (name, t) in names.iter().zip(&a.first) {
            write_tensor(&mut w, &format!("{FIRST_MOMENT}{name}"), t);
        }
        for (name, t) in names.iter().zip(&a.second) {
            write_tensor(&mut w, &format!("{SECOND_MOMENT}{name}"), t);
        }
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, path, "ICLF");
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error_at(4, format!("unsupported version {version}")));
    }
    let config = read_config(&mut r)?;
    let seed = r.u64("seed")?;
    let step = r.u64("step")?;
    let count_at = r.pos();
    let count = r.u32("tensor count")? as usize;
    let mut params = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for _ in 0..count {
        let at = r.pos();
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(r.error_at(at, format!("tensor {name:?} has rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u32("extent").map(|v| v as usize))
            .collect::<Result<_>>()?;
        let len = shape.iter().product::<usize>();
        if len.saturating_mul(4) > r.remaining() {
            return Err(r.error_at(r.pos(), format!("truncated payload of tensor {name:?}")));
        }
        let data = r.f32s(len, "tensor payload")?;
        let t = Tensor::new(&shape, data).map_err(|e| r.error_at(at, e.to_string()))?;
        if let Some(base) = name.strip_prefix(FIRST_MOMENT) {
            first.push((base.to_string(), t, at));
        } else if let Some(base) = name.strip_prefix(SECOND_MOMENT) {
            second.push((base.to_string(), t, at));
        } else {
            params.push((name, t));
        }
    }
    r.finish()?;
    let model = Model::from_named(&config, params).map_err(|e| r.error_at(count_at, e.to_string()))?;
    let adam = if first.is_empty() && second.is_empty() {
        None
    } else {
        let mut state = AdamState::new(model.params());
        for (moments, dst) in [(first, &mut state.first), (second, &mut state.second)] {
            if moments.len() != dst.len() {
                return Err(r.error_at(count_at, format!("{} moment tensors for {} parameters", moments.len(), dst.len())));
            }
            for ((name, t, at), (want, slot)) in moments.into_iter().zip(model.names().iter().zip(dst.iter_mut())) {
                if &name != want || t.shape() != slot.shape() {
                    return Err(r.error_at(at, format!("moment {name:?} does not match parameter {want:?}")));
                }
                *slot = t;
            }
        }
        state.step = step;
        Some(state)
    };
    Ok(Checkpoint {
        seed,
        step,
        model,
        adam,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<String> {
    let bytes = encode_checkpoint(ck);
    write_file(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?, path)
}
