use alloc::vec::Vec;

use super::store::{ClassRecord, ExemplarData, ExemplarStore, Split};
use crate::{Error, Result, RngStream};

/// Class-frequency skew: rank `k` (1-based) has probability ∝ `k^-coefficient`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZipfSpec {
    pub coefficient: f64,
}

impl ZipfSpec {
    pub const UNIFORM: ZipfSpec = ZipfSpec { coefficient: 0.0 };
}

/// Probability table over base-class labels with inverse-CDF sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTable {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl ClassTable {
    pub fn zipf(n: usize, zipf: ZipfSpec) -> Result<Self> {
        if !(zipf.coefficient >= 0.0) || !zipf.coefficient.is_finite() {
            return Err(Error::Spec("zipf coefficient must be finite and non-negative".into()));
        }
        if n == 0 {
            return Err(Error::Spec("no base classes to sample".into()));
        }
        let w: Vec<f64> = (1..=n)
            .map(|k| libm::pow(k as f64, -zipf.coefficient))
            .collect();
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|v| v / total).collect();
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { probs, cdf })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let p0 = self.probs[0];
        self.probs.iter().all(|&p| p == p0)
    }

    /// Draws one label index; consumes exactly one draw.
    pub fn sample(&self, rng: &mut RngStream) -> usize {
        if self.is_uniform() {
            return rng.below(self.probs.len());
        }
        let u = rng.uniform() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }
}

/// Frequency table over the store's base classes; ranks follow label order
/// (ascending class id).
pub fn class_sampler(store: &ExemplarStore, zipf: ZipfSpec) -> Result<ClassTable> {
    ClassTable::zipf(store.base_classes().len(), zipf)
}

/// Keeps a Zipf-shaped subset of training exemplars under a total budget.
///
/// Class at rank `k` keeps `round(budget · p_k)` training exemplars, capped by
/// what it has; while the total exceeds the budget one exemplar is removed
/// from the lowest-ranked class still holding any. Classes left with no
/// training exemplar are dropped. Validation exemplars and novel classes are
/// kept unchanged.
pub fn zipf_subsample(store: &ExemplarStore, zipf: ZipfSpec, budget: usize) -> Result<ExemplarStore> {
    let table = class_sampler(store, zipf)?;
    let base = store.base_classes();
    let mut counts: Vec<usize> = base
        .iter()
        .zip(table.probs())
        .map(|(&c, &p)| {
            let want = libm::round(budget as f64 * p) as usize;
            want.min(store.train_exemplars(c).len())
        })
        .collect();
    let mut total: usize = counts.iter().sum();
    let mut k = counts.len();
    while total > budget && k > 0 {
        if counts[k - 1] == 0 {
            k -= 1;
            continue;
        }
        counts[k - 1] -= 1;
        total -= 1;
    }
    let per = store.kind().values();
    let mut classes = Vec::new();
    for (&ci, &keep) in base.iter().zip(&counts) {
        if keep == 0 {
            continue;
        }
        let c = &store.classes()[ci as usize];
        let train = &store.train_exemplars(ci)[..keep];
        let chosen: Vec<u32> = train
            .iter()
            .chain(store.validation_exemplars(ci))
            .copied()
            .collect();
        let data = match &c.data {
            ExemplarData::Raster(b) => ExemplarData::Raster(
                chosen
                    .iter()
                    .flat_map(|&i| b[i as usize * per..(i as usize + 1) * per].iter().copied())
                    .collect(),
            ),
            ExemplarData::Vector(v) => ExemplarData::Vector(
                chosen
                    .iter()
                    .flat_map(|&i| v[i as usize * per..(i as usize + 1) * per].iter().copied())
                    .collect(),
            ),
        };
        let mut splits = alloc::vec![Split::Train; keep];
        splits.resize(chosen.len(), Split::Validation);
        classes.push(ClassRecord {
            id: c.id,
            novel: false,
            splits,
            data,
        });
    }
    for &ci in store.novel_classes() {
        classes.push(store.classes()[ci as usize].clone());
    }
    ExemplarStore::new(store.kind(), classes)
}
