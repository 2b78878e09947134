use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::config::EmbedderConfig;
use super::conv::{conv_backward, conv_forward, ConvTape};
use super::params::{slot, Model};
use crate::data::ExemplarStore;
use crate::kernels::{
    add_bias, attention_head_backward, attention_head_forward, bias_grad, gelu_backward, gelu_forward, gemm,
    gemm_nt, gemm_tn, layer_norm_backward, layer_norm_forward, HeadLayout,
};
use crate::ops::LN_EPS;
use crate::seq::Episode;
use crate::{Error, Real, Result, Tensor};

/// Which rows a forward pass computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Only the query row leaves the last block; one logit row per episode.
    LastToken,
    /// Every row of every block; logits for all positions.
    Full,
}

/// Raw model inputs for a batch of episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchInput<F = f32> {
    episodes: usize,
    pairs: usize,
    input_len: usize,
    /// `[episodes · (pairs + 1), input_len]`: context exemplars then the query.
    exemplars: Vec<F>,
    /// `[episodes · pairs]` context labels.
    labels: Vec<u32>,
}

impl<F: Real> BatchInput<F> {
    pub fn new(pairs: usize, input_len: usize, exemplars: Vec<F>, labels: Vec<u32>) -> Result<Self> {
        if pairs == 0 || input_len == 0 || !labels.len().is_multiple_of(pairs) {
            return Err(Error::shape("batch_input", format!("{} labels for {pairs} pairs", labels.len())));
        }
        let episodes = labels.len() / pairs;
        if exemplars.len() != episodes * (pairs + 1) * input_len {
            return Err(Error::shape(
                "batch_input",
                format!("{} exemplar values, expected {}", exemplars.len(), episodes * (pairs + 1) * input_len),
            ));
        }
        Ok(Self {
            episodes,
            pairs,
            input_len,
            exemplars,
            labels,
        })
    }

    pub fn from_episodes(store: &ExemplarStore, episodes: &[Episode]) -> Result<Self> {
        let pairs = episodes.first().map(Episode::pairs).unwrap_or(0);
        let per = store.kind().values();
        let mut exemplars = vec![F::ZERO; episodes.len() * (pairs + 1) * per];
        let mut labels = Vec::with_capacity(episodes.len() * pairs);
        let mut rows = exemplars.chunks_exact_mut(per);
        for ep in episodes {
            if ep.pairs() != pairs {
                return Err(Error::shape("batch_input", "episodes differ in context length"));
            }
            for (r, l) in &ep.context {
                store.write_exemplar(*r, rows.next().expect("sized above"));
                labels.push(*l);
            }
            store.write_exemplar(ep.query, rows.next().expect("sized above"));
        }
        Self::new(pairs, per, exemplars, labels)
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn exemplar(&self, episode: usize, slot: usize) -> &[F] {
        let i = episode * (self.pairs + 1) + slot;
        &self.exemplars[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn exemplar_mut(&mut self, episode: usize, slot: usize) -> &mut [F] {
        let i = episode * (self.pairs + 1) + slot;
        &mut self.exemplars[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn labels(&self, episode: usize) -> &[u32] {
        &self.labels[episode * self.pairs..(episode + 1) * self.pairs]
    }
}

#[derive(Clone, Debug, Default)]
struct LayerTape<F> {
    /// Query rows per episode computed by this block.
    active: usize,
    x_in: Vec<F>,
    ln1: Vec<F>,
    m1: Vec<F>,
    r1: Vec<F>,
    qkv: Vec<F>,
    weights: Vec<F>,
    att: Vec<F>,
    x_mid: Vec<F>,
    ln2: Vec<F>,
    m2: Vec<F>,
    r2: Vec<F>,
    fc_pre: Vec<F>,
    fc_act: Vec<F>,
    x_out: Vec<F>,
}

/// Activations of one batched forward pass; reusable across calls.
#[derive(Clone, Debug, Default)]
pub struct Tape<F = f32> {
    episodes: usize,
    tokens: usize,
    mode: Option<Mode>,
    inputs: Vec<F>,
    emb: Vec<F>,
    conv: Vec<ConvTape<F>>,
    layers: Vec<LayerTape<F>>,
    xf: Vec<F>,
    lnf: Vec<F>,
    mf: Vec<F>,
    rf: Vec<F>,
    logits: Vec<F>,
    labels: Vec<u32>,
}

fn resize<F: Real>(v: &mut Vec<F>, n: usize) {
    v.clear();
    v.resize(n, F::ZERO);
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            episodes: 0,
            tokens: 0,
            mode: None,
            inputs: Vec::new(),
            emb: Vec::new(),
            conv: Vec::new(),
            layers: Vec::new(),
            xf: Vec::new(),
            lnf: Vec::new(),
            mf: Vec::new(),
            rf: Vec::new(),
            logits: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Logit rows per episode (1 or `2L + 1`).
    pub fn logit_rows(&self) -> usize {
        match self.mode {
            Some(Mode::Full) => self.tokens,
            _ => 1,
        }
    }

    /// All logits, `[episodes · logit_rows, vocab]`.
    pub fn logits(&self) -> &[F] {
        &self.logits
    }

    /// Query-position logits of episode `b`.
    pub fn last_logits(&self, b: usize) -> &[F] {
        let r = self.logit_rows();
        let v = self.logits.len() / (self.episodes * r);
        let i = b * r + r - 1;
        &self.logits[i * v..(i + 1) * v]
    }

    /// Post-softmax attention of episode `b`, block `l`, head `h` (Full mode
    /// only): `[T, T]`, row-major.
    pub fn attention(&self, b: usize, l: usize, h: usize, heads: usize) -> &[F] {
        let t = self.tokens;
        let lt = &self.layers[l];
        let sz = lt.active * t;
        let off = (b * heads + h) * sz;
        &lt.weights[off..off + sz]
    }

    /// Pre-softmax scaled scores of episode `b`, block `l`, head `h` (Full
    /// mode only), with `-inf`-free zeros above the diagonal.
    pub fn scores(&self, b: usize, l: usize, h: usize, heads: usize) -> Vec<F> {
        let t = self.tokens;
        let lt = &self.layers[l];
        let d3 = lt.qkv.len() / (self.episodes * t);
        let d = d3 / 3;
        let hd = d / heads;
        let scale = F::ONE / F::from_f64(hd as f64).sqrt();
        let qkv = &lt.qkv[b * t * d3..(b + 1) * t * d3];
        let mut out = vec![F::ZERO; t * t];
        for i in 0..t {
            for j in 0..=i {
                let q = &qkv[i * d3 + h * hd..i * d3 + (h + 1) * hd];
                let k = &qkv[j * d3 + d + h * hd..j * d3 + d + (h + 1) * hd];
                out[i * t + j] = crate::kernels::dot(q, k) * scale;
            }
        }
        out
    }

    /// Token embeddings entering the first block, `[episodes · T, d]`.
    pub fn embedded(&self) -> &[F] {
        &self.layers[0].x_in
    }
}

/// Flat offset of slot `s` in episode `b` for a `[B, rows, d]` buffer.
#[inline]
fn row_range(b: usize, rows: usize, s: usize, d: usize) -> core::ops::Range<usize> {
    let i = b * rows + s;
    i * d..(i + 1) * d
}

impl<F: Real> Model<F> {
    /// Runs the batch through the network, leaving activations in `tape`.
    pub fn forward(&self, input: &BatchInput<F>, mode: Mode, tape: &mut Tape<F>) -> Result<()> {
        let cfg = self.config();
        let lay = self.layout();
        let p = self.params();
        if input.pairs != cfg.pairs || input.input_len != cfg.embedder.input_len() {
            return Err(Error::shape(
                "forward",
                format!(
                    "input has {} pairs of length {}, model expects {} of {}",
                    input.pairs,
                    input.input_len,
                    cfg.pairs,
                    cfg.embedder.input_len()
                ),
            ));
        }
        if let Some(&bad) = input.labels.iter().find(|&&l| l as usize >= cfg.label_vocab) {
            return Err(Error::LabelRange {
                label: bad as usize,
                vocab: cfg.label_vocab,
            });
        }
        let (bn, t, d, v, nh) = (input.episodes, cfg.tokens(), cfg.embed_dim, cfg.label_vocab, cfg.heads);
        let hd = d / nh;
        let ns = cfg.pairs + 1;
        tape.episodes = bn;
        tape.tokens = t;
        tape.mode = Some(mode);
        tape.labels.clone_from(&input.labels);

        // exemplar embeddings
        resize(&mut tape.emb, bn * ns * d);
        match &cfg.embedder {
            EmbedderConfig::LinearVector { input_dim } => {
                gemm(&input.exemplars, p[lay.embed].data(), &mut tape.emb, bn * ns, *input_dim, d);
                tape.inputs.clone_from(&input.exemplars);
                add_bias(&mut tape.emb, p[lay.embed + 1].data());
            }
            EmbedderConfig::ConvRaster { height, width, widths } => {
                tape.conv.resize_with(bn * ns, ConvTape::default);
                let ep = &p[lay.embed..lay.label];
                for i in 0..bn * ns {
                    let x = &input.exemplars[i * input.input_len..(i + 1) * input.input_len];
                    conv_forward(ep, *height, *width, widths, x, &mut tape.conv[i], &mut tape.emb[i * d..(i + 1) * d]);
                }
            }
        }

        tape.layers.resize_with(cfg.layers, LayerTape::default);
        {
            let x0 = &mut tape.layers[0].x_in;
            resize(x0, bn * t * d);
            let lab = p[lay.label].data();
            let pos = p[lay.pos].data();
            for b in 0..bn {
                for s in 0..t {
                    let dst = &mut x0[row_range(b, t, s, d)];
                    if s % 2 == 0 {
                        dst.copy_from_slice(&tape.emb[row_range(b, ns, s / 2, d)]);
                    } else {
                        let l = input.labels[b * cfg.pairs + s / 2] as usize;
                        dst.copy_from_slice(&lab[l * d..(l + 1) * d]);
                    }
                    for (x, &pv) in dst.iter_mut().zip(&pos[s * d..(s + 1) * d]) {
                        *x += pv;
                    }
                }
            }
        }

        let scale = F::ONE / F::from_f64(hd as f64).sqrt();
        let eps = F::from_f64(LN_EPS);
        for l in 0..cfg.layers {
            if l > 0 {
                let (prev, cur) = tape.layers.split_at_mut(l);
                cur[0].x_in.clone_from(&prev[l - 1].x_out);
            }
            let lt = &mut tape.layers[l];
            let a = if mode == Mode::LastToken && l + 1 == cfg.layers { 1 } else { t };
            lt.active = a;
            let w = |s| p[lay.layer(l, s)].data();
            let n_all = bn * t;
            let n_act = bn * a;

            resize(&mut lt.ln1, n_all * d);
            resize(&mut lt.m1, n_all);
            resize(&mut lt.r1, n_all);
            layer_norm_forward(&lt.x_in, w(slot::LN1_G), w(slot::LN1_B), eps, &mut lt.ln1, &mut lt.m1, &mut lt.r1);
            resize(&mut lt.qkv, n_all * 3 * d);
            gemm(&lt.ln1, w(slot::QKV_W), &mut lt.qkv, n_all, d, 3 * d);
            add_bias(&mut lt.qkv, w(slot::QKV_B));

            resize(&mut lt.weights, bn * nh * a * t);
            resize(&mut lt.att, n_act * d);
            for b in 0..bn {
                let qkv = &lt.qkv[b * t * 3 * d..(b + 1) * t * 3 * d];
                for h in 0..nh {
                    let head = HeadLayout {
                        stride: 3 * d,
                        q: h * hd,
                        k: d + h * hd,
                        v: 2 * d + h * hd,
                        dim: hd,
                    };
                    let wo = (b * nh + h) * a * t;
                    attention_head_forward(
                        qkv,
                        head,
                        t,
                        t - a,
                        scale,
                        &mut lt.weights[wo..wo + a * t],
                        &mut lt.att[b * a * d..(b + 1) * a * d],
                        d,
                        h * hd,
                    );
                }
            }

            resize(&mut lt.x_mid, n_act * d);
            for b in 0..bn {
                for s in 0..a {
                    lt.x_mid[row_range(b, a, s, d)].copy_from_slice(&lt.x_in[row_range(b, t, t - a + s, d)]);
                }
            }
            gemm(&lt.att, w(slot::PROJ_W), &mut lt.x_mid, n_act, d, d);
            add_bias(&mut lt.x_mid, w(slot::PROJ_B));

            resize(&mut lt.ln2, n_act * d);
            resize(&mut lt.m2, n_act);
            resize(&mut lt.r2, n_act);
            layer_norm_forward(&lt.x_mid, w(slot::LN2_G), w(slot::LN2_B), eps, &mut lt.ln2, &mut lt.m2, &mut lt.r2);
            resize(&mut lt.fc_pre, n_act * 4 * d);
            gemm(&lt.ln2, w(slot::FC_W), &mut lt.fc_pre, n_act, d, 4 * d);
            add_bias(&mut lt.fc_pre, w(slot::FC_B));
            resize(&mut lt.fc_act, n_act * 4 * d);
            gelu_forward(&lt.fc_pre, &mut lt.fc_act);
            lt.x_out.clone_from(&lt.x_mid);
            gemm(&lt.fc_act, w(slot::MLP_W), &mut lt.x_out, n_act, 4 * d, d);
            add_bias(&mut lt.x_out, w(slot::MLP_B));
        }

        let last = &tape.layers[cfg.layers - 1];
        let r = tape.logit_rows();
        let a = last.active;
        resize(&mut tape.xf, bn * r * d);
        for b in 0..bn {
            for s in 0..r {
                tape.xf[row_range(b, r, s, d)].copy_from_slice(&last.x_out[row_range(b, a, a - r + s, d)]);
            }
        }
        resize(&mut tape.lnf, bn * r * d);
        resize(&mut tape.mf, bn * r);
        resize(&mut tape.rf, bn * r);
        layer_norm_forward(
            &tape.xf,
            p[lay.lnf_g].data(),
            p[lay.lnf_b].data(),
            eps,
            &mut tape.lnf,
            &mut tape.mf,
            &mut tape.rf,
        );
        resize(&mut tape.logits, bn * r * v);
        gemm(&tape.lnf, p[lay.head_w].data(), &mut tape.logits, bn * r, d, v);
        add_bias(&mut tape.logits, p[lay.head_b].data());
        if let Some(i) = tape.logits.iter().position(|x| !x.is_finite()) {
            return Err(Error::non_finite(format!(
                "logit {} of episode {} in forward pass",
                i % v,
                i / (v * r)
            )));
        }
        Ok(())
    }

    /// Accumulates parameter gradients into `grads` given the gradient of the
    /// loss with respect to `tape.logits()`.
    pub fn backward(&self, tape: &Tape<F>, dlogits: &[F], grads: &mut [Tensor<F>]) -> Result<()> {
        let cfg = self.config();
        let lay = self.layout();
        let p = self.params();
        let (bn, t, d, v, nh) = (tape.episodes, tape.tokens, cfg.embed_dim, cfg.label_vocab, cfg.heads);
        let hd = d / nh;
        let r = tape.logit_rows();
        if dlogits.len() != tape.logits.len() || grads.len() != p.len() {
            return Err(Error::shape("backward", "gradient buffers do not match the forward pass"));
        }
        gemm_tn(&tape.lnf, dlogits, grads[lay.head_w].data_mut(), bn * r, d, v);
        bias_grad(dlogits, grads[lay.head_b].data_mut());
        let mut dlnf = vec![F::ZERO; bn * r * d];
        gemm_nt(dlogits, p[lay.head_w].data(), &mut dlnf, bn * r, v, d);
        let mut dxf = vec![F::ZERO; bn * r * d];
        {
            let (gg, gb) = two_mut(grads, lay.lnf_g, lay.lnf_b);
            layer_norm_backward(&tape.xf, p[lay.lnf_g].data(), &tape.mf, &tape.rf, &dlnf, &mut dxf, gg, gb);
        }
        let a_last = tape.layers[cfg.layers - 1].active;
        let mut dx = vec![F::ZERO; bn * a_last * d];
        for b in 0..bn {
            for s in 0..r {
                let dst = &mut dx[row_range(b, a_last, a_last - r + s, d)];
                dst.copy_from_slice(&dxf[row_range(b, r, s, d)]);
            }
        }

        let scale = F::ONE / F::from_f64(hd as f64).sqrt();
        let mut scratch = vec![F::ZERO; t];
        for l in (0..cfg.layers).rev() {
            let lt = &tape.layers[l];
            let a = lt.active;
            let n_act = bn * a;
            let n_all = bn * t;
            let idx = |s| lay.layer(l, s);
            let w = |s| p[lay.layer(l, s)].data();

            // MLP
            gemm_tn(&lt.fc_act, &dx, grads[idx(slot::MLP_W)].data_mut(), n_act, 4 * d, d);
            bias_grad(&dx, grads[idx(slot::MLP_B)].data_mut());
            let mut dact = vec![F::ZERO; n_act * 4 * d];
            gemm_nt(&dx, w(slot::MLP_W), &mut dact, n_act, d, 4 * d);
            let mut dpre = vec![F::ZERO; n_act * 4 * d];
            gelu_backward(&lt.fc_pre, &dact, &mut dpre);
            gemm_tn(&lt.ln2, &dpre, grads[idx(slot::FC_W)].data_mut(), n_act, d, 4 * d);
            bias_grad(&dpre, grads[idx(slot::FC_B)].data_mut());
            let mut dln2 = vec![F::ZERO; n_act * d];
            gemm_nt(&dpre, w(slot::FC_W), &mut dln2, n_act, 4 * d, d);
            let mut dmid = dx;
            {
                let (gg, gb) = two_mut(grads, idx(slot::LN2_G), idx(slot::LN2_B));
                layer_norm_backward(&lt.x_mid, w(slot::LN2_G), &lt.m2, &lt.r2, &dln2, &mut dmid, gg, gb);
            }

            // attention
            gemm_tn(&lt.att, &dmid, grads[idx(slot::PROJ_W)].data_mut(), n_act, d, d);
            bias_grad(&dmid, grads[idx(slot::PROJ_B)].data_mut());
            let mut datt = vec![F::ZERO; n_act * d];
            gemm_nt(&dmid, w(slot::PROJ_W), &mut datt, n_act, d, d);
            let mut dqkv = vec![F::ZERO; n_all * 3 * d];
            for b in 0..bn {
                let qkv = &lt.qkv[b * t * 3 * d..(b + 1) * t * 3 * d];
                let dq = &mut dqkv[b * t * 3 * d..(b + 1) * t * 3 * d];
                for h in 0..nh {
                    let head = HeadLayout {
                        stride: 3 * d,
                        q: h * hd,
                        k: d + h * hd,
                        v: 2 * d + h * hd,
                        dim: hd,
                    };
                    let wo = (b * nh + h) * a * t;
                    attention_head_backward(
                        qkv,
                        head,
                        t,
                        t - a,
                        scale,
                        &lt.weights[wo..wo + a * t],
                        &datt[b * a * d..(b + 1) * a * d],
                        d,
                        h * hd,
                        dq,
                        &mut scratch,
                    );
                }
            }
            gemm_tn(&lt.ln1, &dqkv, grads[idx(slot::QKV_W)].data_mut(), n_all, d, 3 * d);
            bias_grad(&dqkv, grads[idx(slot::QKV_B)].data_mut());
            let mut dln1 = vec![F::ZERO; n_all * d];
            gemm_nt(&dqkv, w(slot::QKV_W), &mut dln1, n_all, 3 * d, d);
            let mut dxin = vec![F::ZERO; n_all * d];
            for b in 0..bn {
                for s in 0..a {
                    let src = &dmid[row_range(b, a, s, d)];
                    for (g, &v) in dxin[row_range(b, t, t - a + s, d)].iter_mut().zip(src) {
                        *g += v;
                    }
                }
            }
            {
                let (gg, gb) = two_mut(grads, idx(slot::LN1_G), idx(slot::LN1_B));
                layer_norm_backward(&lt.x_in, w(slot::LN1_G), &lt.m1, &lt.r1, &dln1, &mut dxin, gg, gb);
            }
            dx = dxin;
        }

        // embeddings
        let ns = cfg.pairs + 1;
        let mut demb = vec![F::ZERO; bn * ns * d];
        {
            let (gl, gp) = two_mut(grads, lay.label, lay.pos);
            for b in 0..bn {
                for s in 0..t {
                    let g = &dx[row_range(b, t, s, d)];
                    for (o, &v) in gp[s * d..(s + 1) * d].iter_mut().zip(g) {
                        *o += v;
                    }
                    if s % 2 == 0 {
                        demb[row_range(b, ns, s / 2, d)].copy_from_slice(g);
                    } else {
                        let lbl = tape.labels[b * cfg.pairs + s / 2] as usize;
                        for (o, &v) in gl[lbl * d..(lbl + 1) * d].iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                }
            }
        }
        match &cfg.embedder {
            EmbedderConfig::LinearVector { input_dim } => {
                gemm_tn(&tape.inputs, &demb, grads[lay.embed].data_mut(), bn * ns, *input_dim, d);
                bias_grad(&demb, grads[lay.embed + 1].data_mut());
                Ok(())
            }
            EmbedderConfig::ConvRaster { height, width, widths } => {
                let ep = &p[lay.embed..lay.label];
                let eg = &mut grads[lay.embed..lay.label];
                for i in 0..bn * ns {
                    conv_backward(ep, *height, *width, widths, &tape.conv[i], &demb[i * d..(i + 1) * d], eg);
                }
                Ok(())
            }
        }
    }
}

fn two_mut<F: Real>(xs: &mut [Tensor<F>], i: usize, j: usize) -> (&mut [F], &mut [F]) {
    debug_assert!(i < j);
    let (lo, hi) = xs.split_at_mut(j);
    (lo[i].data_mut(), hi[0].data_mut())
}

impl<F: Real> Tape<F> {
    /// Mean query-position cross-entropy over the batch and its gradient
    /// with respect to [`Tape::logits`] (zero on non-query rows).
    pub fn last_token_loss(&self, targets: &[u32]) -> Result<(F, Vec<F>)> {
        if targets.len() != self.episodes {
            return Err(Error::shape("last_token_loss", "one target per episode"));
        }
        let r = self.logit_rows();
        let v = self.logits.len() / (self.episodes * r);
        let mut grad = vec![F::ZERO; self.logits.len()];
        let inv = F::ONE / F::from_f64(self.episodes as f64);
        let mut total = F::ZERO;
        for (b, &tg) in targets.iter().enumerate() {
            if tg as usize >= v {
                return Err(Error::LabelRange {
                    label: tg as usize,
                    vocab: v,
                });
            }
            let i = b * r + r - 1;
            let g = &mut grad[i * v..(i + 1) * v];
            total += crate::ops::xent_row(&self.logits[i * v..(i + 1) * v], tg as usize, g);
            g.iter_mut().for_each(|x| *x *= inv);
        }
        Ok((total * inv, grad))
    }
}
