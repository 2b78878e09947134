use alloc::format;
use alloc::vec::Vec;

use super::store::{ClassRecord, ExemplarData, ExemplarStore, Split};
use crate::rng::{purpose, RngStream};
use crate::{Error, Result};

/// Marks `n_novel` classes as novel and tags each remaining class's
/// exemplars with `train`/`validation` splits, all chosen per `seed`.
///
/// Every class must hold exactly `train + validation` exemplars.
pub fn split_holdout(
    store: &ExemplarStore,
    n_novel: usize,
    per_class: (usize, usize),
    seed: u64,
) -> Result<ExemplarStore> {
    let n = store.num_classes();
    if n_novel >= n {
        return Err(Error::Split(format!("{n_novel} novel classes requested from {n}")));
    }
    let (train, val) = per_class;
    let need = train + val;
    let mut rng = RngStream::derive(seed, &[purpose::SPLIT, 0]);
    let mut is_novel = alloc::vec![false; n];
    for c in rng.choose_distinct(n, n_novel) {
        is_novel[c] = true;
    }
    let mut classes = Vec::with_capacity(n);
    for (ci, c) in store.classes().iter().enumerate() {
        if c.len() != need {
            return Err(Error::Split(format!(
                "class {} has {} exemplars, split needs {train}+{val}",
                c.id,
                c.len()
            )));
        }
        let mut rec = c.clone();
        rec.novel = is_novel[ci];
        if rec.novel {
            rec.splits = alloc::vec![Split::Train; need];
        } else {
            let mut crng = RngStream::derive(seed, &[purpose::SPLIT, 1, u64::from(c.id)]);
            rec.splits = alloc::vec![Split::Train; need];
            for i in crng.choose_distinct(need, val) {
                rec.splits[i] = Split::Validation;
            }
        }
        classes.push(rec);
    }
    ExemplarStore::new(store.kind(), classes)
}

/// Instance discrimination: every training exemplar of a base class becomes a
/// singleton class. Validation exemplars are dropped; novel classes are kept
/// as they are, with ids moved past the new singleton ids.
pub fn instance_relabel(store: &ExemplarStore) -> Result<ExemplarStore> {
    let per = store.kind().values();
    let mut classes = Vec::new();
    let mut next_id = 0u32;
    for &ci in store.base_classes() {
        let c = &store.classes()[ci as usize];
        for &ei in store.train_exemplars(ci) {
            let s = ei as usize * per;
            let data = match &c.data {
                ExemplarData::Raster(b) => ExemplarData::Raster(b[s..s + per].to_vec()),
                ExemplarData::Vector(v) => ExemplarData::Vector(v[s..s + per].to_vec()),
            };
            classes.push(ClassRecord {
                id: next_id,
                novel: false,
                splits: alloc::vec![Split::Train],
                data,
            });
            next_id += 1;
        }
    }
    for &ci in store.novel_classes() {
        let mut rec = store.classes()[ci as usize].clone();
        rec.id = next_id;
        next_id += 1;
        classes.push(rec);
    }
    ExemplarStore::new(store.kind(), classes)
}
