//! Attention-probe metrics tracking induction-head formation.
//!
//! All four metrics read one attention matrix per (block, head):
//!
//! * label-image: label row `p` attending to the sample at `p - 1`;
//! * image-image-diag: sample row attending to the nearest preceding sample
//!   (or, with [`DiagVariant::AllImages`], to all preceding samples);
//! * image-image-query: query row mass on same-class context samples;
//! * image-label: query row mass on context labels equal to the target.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::ExemplarStore;
use crate::model::{AttentionTrace, BatchInput, Mode, Model, Tape, TokenRole};
use crate::seq::Episode;
use crate::train::EVAL_CHUNK;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiagVariant {
    /// Nearest preceding sample only.
    #[default]
    NearestSample,
    /// Total mass on all preceding samples.
    AllImages,
}

/// One value per (block, head), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadValues {
    pub layers: usize,
    pub heads: usize,
    pub values: Vec<f64>,
}

impl HeadValues {
    fn zeros(layers: usize, heads: usize) -> Self {
        Self {
            layers,
            heads,
            values: vec![0.0; layers * heads],
        }
    }

    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.values[layer * self.heads + head]
    }

    /// Largest value over every head of every block.
    pub fn max_over_heads(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest value over the heads of `layer`.
    pub fn layer_max(&self, layer: usize) -> f64 {
        self.values[layer * self.heads..(layer + 1) * self.heads]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn per_head(trace: &AttentionTrace, mut f: impl FnMut(&[f32], usize) -> f64) -> HeadValues {
    let mut out = HeadValues::zeros(trace.layers(), trace.heads());
    for l in 0..trace.layers() {
        for h in 0..trace.heads() {
            out.values[l * trace.heads() + h] = f(trace.matrix(l, h), trace.tokens());
        }
    }
    out
}

fn positions(trace: &AttentionTrace, role: TokenRole) -> Vec<usize> {
    trace
        .roles()
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == role)
        .map(|(i, _)| i)
        .collect()
}

fn query_position(trace: &AttentionTrace) -> Option<usize> {
    trace.roles().iter().position(|r| *r == TokenRole::Query)
}

/// Mean over label rows `p` of `w[p][p - 1]`.
pub fn metric_label_image(trace: &AttentionTrace) -> HeadValues {
    let rows: Vec<usize> = positions(trace, TokenRole::Label).into_iter().filter(|&p| p > 0).collect();
    per_head(trace, |w, t| {
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|&p| f64::from(w[p * t + p - 1])).sum::<f64>() / rows.len() as f64
    })
}

/// Mean over context sample rows that have a preceding sample.
pub fn metric_image_image_diag(trace: &AttentionTrace, variant: DiagVariant) -> HeadValues {
    let samples = positions(trace, TokenRole::Sample);
    let rows: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &p)| (p, samples[i - 1]))
        .collect();
    per_head(trace, |w, t| {
        if rows.is_empty() {
            return 0.0;
        }
        let total: f64 = rows
            .iter()
            .map(|&(p, prev)| match variant {
                DiagVariant::NearestSample => f64::from(w[p * t + prev]),
                DiagVariant::AllImages => samples
                    .iter()
                    .take_while(|&&j| j < p)
                    .map(|&j| f64::from(w[p * t + j]))
                    .sum(),
            })
            .sum();
        total / rows.len() as f64
    })
}

/// Query-row mass on context samples of the query's class; `None` when the
/// context holds no such sample.
pub fn metric_image_image_query(trace: &AttentionTrace, episode: &Episode) -> Option<HeadValues> {
    let q = query_position(trace)?;
    let samples = positions(trace, TokenRole::Sample);
    let hits: Vec<usize> = episode
        .context
        .iter()
        .zip(&samples)
        .filter(|((r, _), _)| r.class == episode.query.class)
        .map(|(_, &p)| p)
        .collect();
    if hits.is_empty() {
        return None;
    }
    Some(per_head(trace, |w, t| hits.iter().map(|&j| f64::from(w[q * t + j])).sum()))
}

/// Query-row mass on context labels equal to the episode target.
pub fn metric_image_label(trace: &AttentionTrace, episode: &Episode) -> HeadValues {
    let Some(q) = query_position(trace) else {
        return HeadValues::zeros(trace.layers(), trace.heads());
    };
    let labels = positions(trace, TokenRole::Label);
    let hits: Vec<usize> = episode
        .context
        .iter()
        .zip(&labels)
        .filter(|((_, l), _)| *l == episode.target)
        .map(|(_, &p)| p)
        .collect();
    per_head(trace, |w, t| hits.iter().map(|&j| f64::from(w[q * t + j])).sum())
}

/// Label-image value of uniform causal attention over `2L + 1` tokens.
pub fn uniform_label_image_baseline(pairs: usize) -> f64 {
    (0..pairs).map(|i| 1.0 / (2 * i + 2) as f64).sum::<f64>() / pairs as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProbeOptions {
    pub diag: DiagVariant,
    /// Use scaled QK scores instead of attention probabilities.
    pub pre_softmax: bool,
}

/// Suite averages of the four metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgressMetrics {
    pub image_image_diag: HeadValues,
    pub label_image: HeadValues,
    /// Averaged over episodes with same-class context only.
    pub image_image_query: HeadValues,
    pub image_label: HeadValues,
    pub episodes: usize,
    pub query_episodes: usize,
}

impl ProgressMetrics {
    /// `(metric-name, values)` in reporting order.
    pub fn named(&self) -> [(&'static str, &HeadValues); 4] {
        [
            ("image-image-diag", &self.image_image_diag),
            ("label-image", &self.label_image),
            ("image-image-query", &self.image_image_query),
            ("image-label", &self.image_label),
        ]
    }
}

/// Running sums of per-trace metrics.
#[derive(Clone, Debug)]
pub struct ProbeAccumulator {
    options: ProbeOptions,
    diag: HeadValues,
    label_image: HeadValues,
    query: HeadValues,
    image_label: HeadValues,
    n: usize,
    nq: usize,
}

fn add(acc: &mut HeadValues, v: &HeadValues) {
    for (a, b) in acc.values.iter_mut().zip(&v.values) {
        *a += b;
    }
}

fn scaled(v: &HeadValues, n: usize) -> HeadValues {
    let d = if n == 0 { 1.0 } else { n as f64 };
    HeadValues {
        layers: v.layers,
        heads: v.heads,
        values: v.values.iter().map(|x| x / d).collect(),
    }
}

impl ProbeAccumulator {
    pub fn new(layers: usize, heads: usize, options: ProbeOptions) -> Self {
        Self {
            options,
            diag: HeadValues::zeros(layers, heads),
            label_image: HeadValues::zeros(layers, heads),
            query: HeadValues::zeros(layers, heads),
            image_label: HeadValues::zeros(layers, heads),
            n: 0,
            nq: 0,
        }
    }

    pub fn add(&mut self, trace: &AttentionTrace, episode: &Episode) {
        add(&mut self.diag, &metric_image_image_diag(trace, self.options.diag));
        add(&mut self.label_image, &metric_label_image(trace));
        add(&mut self.image_label, &metric_image_label(trace, episode));
        if let Some(q) = metric_image_image_query(trace, episode) {
            add(&mut self.query, &q);
            self.nq += 1;
        }
        self.n += 1;
    }

    pub fn finish(&self) -> ProgressMetrics {
        ProgressMetrics {
            image_image_diag: scaled(&self.diag, self.n),
            label_image: scaled(&self.label_image, self.n),
            image_image_query: scaled(&self.query, self.nq),
            image_label: scaled(&self.image_label, self.n),
            episodes: self.n,
            query_episodes: self.nq,
        }
    }
}

/// Traces every episode (batched) and averages the four metrics.
pub fn probe_suite<F: Real>(
    model: &Model<F>,
    store: &ExemplarStore,
    episodes: &[Episode],
    options: ProbeOptions,
) -> Result<ProgressMetrics> {
    if episodes.is_empty() {
        return Err(Error::Eval("probe suite is empty".into()));
    }
    let cfg = model.config();
    let mut acc = ProbeAccumulator::new(cfg.layers, cfg.heads, options);
    let mut tape = Tape::new();
    for chunk in episodes.chunks(EVAL_CHUNK) {
        let input = BatchInput::from_episodes(store, chunk)?;
        model.forward(&input, Mode::Full, &mut tape)?;
        for (b, ep) in chunk.iter().enumerate() {
            let tr = AttentionTrace::from_tape(&tape, b, cfg.layers, cfg.heads, options.pre_softmax);
            acc.add(&tr, ep);
        }
    }
    Ok(acc.finish())
}

/// Previous-token (label-image) scores over a sequence of checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadScoreSeries {
    pub steps: Vec<u64>,
    pub scores: Vec<HeadValues>,
}

pub fn prev_token_score_series<F: Real>(
    checkpoints: &[(u64, Model<F>)],
    store: &ExemplarStore,
    suite: &[Episode],
) -> Result<HeadScoreSeries> {
    let Some((_, first)) = checkpoints.first() else {
        return Err(Error::Series("no checkpoints".into()));
    };
    let mut steps = Vec::with_capacity(checkpoints.len());
    let mut scores = Vec::with_capacity(checkpoints.len());
    for (step, model) in checkpoints {
        if model.config() != first.config() {
            return Err(Error::Series(format!("checkpoint at step {step} has a different model config")));
        }
        if let Some(&prev) = steps.last() {
            if *step <= prev {
                return Err(Error::Series(format!("checkpoint step {step} follows step {prev}")));
            }
        }
        let m = probe_suite(model, store, suite, ProbeOptions::default())?;
        steps.push(*step);
        scores.push(m.label_image);
    }
    Ok(HeadScoreSeries { steps, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExemplarRef;
    use crate::seq::{EpisodeKind, Provenance};
    use proptest::prelude::*;

    fn uniform(pairs: usize) -> AttentionTrace {
        let t = 2 * pairs + 1;
        let mut w = vec![0.0f32; t * t];
        for i in 0..t {
            for j in 0..=i {
                w[i * t + j] = 1.0 / (i + 1) as f32;
            }
        }
        AttentionTrace::new(1, 1, TokenRole::layout(pairs), w).unwrap()
    }

    fn episode(classes: &[u32], labels: &[u32], query: u32, target: u32) -> Episode {
        Episode {
            context: classes
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&c, &l))| (ExemplarRef::new(c as usize, i), l))
                .collect(),
            query: ExemplarRef::new(query as usize, 99),
            target,
            provenance: Provenance {
                kind: EpisodeKind::Bursty,
                swapped: false,
                inst_copy: true,
            },
            remap: Vec::new(),
        }
    }

    #[test]
    fn uniform_label_image_is_the_harmonic_average() {
        let v = metric_label_image(&uniform(8)).get(0, 0);
        let direct = (0.5 + 0.25 + 1.0 / 6.0 + 0.125 + 0.1 + 1.0 / 12.0 + 1.0 / 14.0 + 1.0 / 16.0) / 8.0;
        assert!((v - direct).abs() < 1e-6);
        assert!((uniform_label_image_baseline(8) - direct).abs() < 1e-15);
        assert!((direct - 0.169_866).abs() < 1e-6);
    }

    #[test]
    fn hand_built_five_token_trace() {
        // tokens: s0 l0 s1 l1 q
        #[rustfmt::skip]
        let w = vec![
            1.0, 0.0, 0.0, 0.0, 0.0,
            0.3, 0.7, 0.0, 0.0, 0.0,
            0.2, 0.3, 0.5, 0.0, 0.0,
            0.1, 0.2, 0.6, 0.1, 0.0,
            0.4, 0.1, 0.2, 0.2, 0.1,
        ];
        let tr = AttentionTrace::new(1, 1, TokenRole::layout(2), w).unwrap();
        assert!((metric_label_image(&tr).get(0, 0) - (0.3 + 0.6) / 2.0).abs() < 1e-7);
        assert!((metric_image_image_diag(&tr, DiagVariant::NearestSample).get(0, 0) - 0.2).abs() < 1e-7);
        assert!((metric_image_image_diag(&tr, DiagVariant::AllImages).get(0, 0) - 0.2).abs() < 1e-7);
        let ep = episode(&[4, 7], &[1, 0], 7, 0);
        assert!((metric_image_image_query(&tr, &ep).unwrap().get(0, 0) - 0.2).abs() < 1e-7);
        assert!((metric_image_label(&tr, &ep).get(0, 0) - 0.2).abs() < 1e-7);
        let none = episode(&[4, 5], &[1, 0], 7, 2);
        assert!(metric_image_image_query(&tr, &none).is_none());
        assert_eq!(metric_image_label(&tr, &none).get(0, 0), 0.0);
    }

    #[test]
    fn saturated_heads_score_one() {
        let pairs = 8;
        let t = 17;
        let mut prev = vec![0.0f32; t * t];
        let mut diag = vec![0.0f32; t * t];
        prev[0] = 1.0;
        diag[0] = 1.0;
        for i in 1..t {
            prev[i * t + i - 1] = 1.0;
            let j = if i % 2 == 0 && i >= 2 { i - 2 } else { i };
            diag[i * t + j] = 1.0;
        }
        let tp = AttentionTrace::new(1, 1, TokenRole::layout(pairs), prev).unwrap();
        assert_eq!(metric_label_image(&tp).get(0, 0), 1.0);
        let td = AttentionTrace::new(1, 1, TokenRole::layout(pairs), diag).unwrap();
        assert_eq!(metric_image_image_diag(&td, DiagVariant::NearestSample).get(0, 0), 1.0);

        let mut q = vec![0.0f32; t * t];
        for i in 0..t - 1 {
            q[i * t + i] = 1.0;
        }
        q[16 * t + 6] = 1.0;
        let tq = AttentionTrace::new(1, 1, TokenRole::layout(pairs), q).unwrap();
        let ep = episode(&[1, 2, 3, 9, 4, 5, 6, 7], &[1, 2, 3, 0, 4, 5, 6, 7], 9, 0);
        assert_eq!(metric_image_image_query(&tq, &ep).unwrap().get(0, 0), 1.0);
        let mut ql = vec![0.0f32; t * t];
        for i in 0..t - 1 {
            ql[i * t + i] = 1.0;
        }
        ql[16 * t + 7] = 1.0;
        let tl = AttentionTrace::new(1, 1, TokenRole::layout(pairs), ql).unwrap();
        assert_eq!(metric_image_label(&tl, &ep).get(0, 0), 1.0);
    }

    #[test]
    fn uniform_query_row_with_three_copies() {
        let tr = uniform(8);
        let ep = episode(&[9, 1, 9, 2, 3, 9, 4, 5], &[0, 1, 0, 2, 3, 0, 4, 5], 9, 0);
        let q = metric_image_image_query(&tr, &ep).unwrap().get(0, 0);
        let l = metric_image_label(&tr, &ep).get(0, 0);
        assert!((q - 3.0 / 17.0).abs() < 1e-6);
        assert!((l - 3.0 / 17.0).abs() < 1e-6);
    }

    #[test]
    fn label_image_ignores_non_label_rows() {
        let t = 17;
        let mut w = vec![0.0f32; t * t];
        for i in 0..t {
            if i % 2 == 1 {
                w[i * t + i - 1] = 1.0;
            } else {
                w[i * t] = 1.0;
            }
        }
        let tr = AttentionTrace::new(1, 1, TokenRole::layout(8), w).unwrap();
        assert_eq!(metric_label_image(&tr).get(0, 0), 1.0);
    }

    fn random_trace(seed: u64, pairs: usize, heads: usize) -> AttentionTrace {
        let t = 2 * pairs + 1;
        let mut rng = crate::RngStream::new(seed, 0);
        let mut w = vec![0.0f32; 2 * heads * t * t];
        for m in w.chunks_exact_mut(t * t) {
            for i in 0..t {
                let row = &mut m[i * t..i * t + i + 1];
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = rng.uniform() as f32;
                    s += *v;
                }
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        AttentionTrace::new(2, heads, TokenRole::layout(pairs), w).unwrap()
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval(seed in 0u64..10_000, pairs in 1usize..10, heads in 1usize..3) {
            let tr = random_trace(seed, pairs, heads);
            let classes: Vec<u32> = (0..pairs as u32).map(|i| i % 3).collect();
            let labels: Vec<u32> = (0..pairs as u32).map(|i| i % 2).collect();
            let ep = episode(&classes, &labels, 0, 0);
            let mut all = vec![
                metric_label_image(&tr),
                metric_image_image_diag(&tr, DiagVariant::NearestSample),
                metric_image_image_diag(&tr, DiagVariant::AllImages),
                metric_image_label(&tr, &ep),
            ];
            all.extend(metric_image_image_query(&tr, &ep));
            for hv in all {
                for v in hv.values {
                    prop_assert!((-1e-6..=1.0 + 1e-6).contains(&v));
                }
            }
        }
    }
}
