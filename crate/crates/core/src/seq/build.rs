use alloc::format;
use alloc::vec::Vec;

use super::episode::{Episode, EpisodeKind, Provenance};
use super::recipe::{EvalTask, Recipe, TrainingMix, Variant};
use crate::data::{ClassTable, ExemplarRef, ExemplarStore};
use crate::rng::purpose;
use crate::{Error, Result, RngStream};

/// Draws `k` distinct base labels from `table`, excluding those in `taken`.
fn distinct_labels(
    table: &ClassTable,
    k: usize,
    taken: &mut Vec<usize>,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    if taken.len() + k > table.len() {
        return Err(Error::Recipe(format!(
            "need {} distinct classes, store has {}",
            taken.len() + k,
            table.len()
        )));
    }
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let c = table.sample(rng);
        if !taken.contains(&c) {
            taken.push(c);
            out.push(c);
        }
    }
    Ok(out)
}

/// `n` distinct training exemplars of base class `class` (store position).
fn train_refs(store: &ExemplarStore, class: u32, n: usize, rng: &mut RngStream) -> Result<Vec<ExemplarRef>> {
    let pool = store.train_exemplars(class);
    if pool.len() < n {
        return Err(Error::Recipe(format!(
            "class at position {class} has {} training exemplars, need {n}",
            pool.len()
        )));
    }
    Ok(rng
        .choose_distinct(pool.len(), n)
        .into_iter()
        .map(|i| ExemplarRef {
            class,
            index: pool[i],
        })
        .collect())
}

fn base_class(store: &ExemplarStore, label: usize) -> u32 {
    store.base_classes()[label]
}

/// `pairs` context items from distinct base classes and a query from one more.
pub fn build_standard(
    store: &ExemplarStore,
    table: &ClassTable,
    pairs: usize,
    rng: &mut RngStream,
) -> Result<Episode> {
    let labels = distinct_labels(table, pairs + 1, &mut Vec::new(), rng)?;
    let mut context = Vec::with_capacity(pairs);
    for &l in &labels[..pairs] {
        let r = train_refs(store, base_class(store, l), 1, rng)?[0];
        context.push((r, l as u32));
    }
    let ql = labels[pairs];
    let query = train_refs(store, base_class(store, ql), 1, rng)?[0];
    rng.shuffle(&mut context);
    Ok(Episode {
        context,
        query,
        target: ql as u32,
        provenance: Provenance {
            kind: EpisodeKind::Standard,
            swapped: false,
            inst_copy: false,
        },
        remap: Vec::new(),
    })
}

/// Context laid out per the recipe's burst format; the query is a further
/// exemplar of the query class, distinct from its context items.
pub fn build_bursty(
    store: &ExemplarStore,
    table: &ClassTable,
    recipe: &Recipe,
    rng: &mut RngStream,
) -> Result<Episode> {
    if recipe.variant != Variant::Bursty {
        return Err(Error::Recipe("build_bursty needs a bursty recipe".into()));
    }
    let format = &recipe.format;
    let groups: Vec<usize> = format.distractor_groups().collect();
    let mut taken = Vec::new();
    let ql = distinct_labels(table, 1, &mut taken, rng)?[0];
    let others = distinct_labels(table, groups.len(), &mut taken, rng)?;
    let reps = format.query_reps();
    let qrefs = train_refs(store, base_class(store, ql), reps + 1, rng)?;
    let mut context = Vec::with_capacity(format.total());
    for &r in &qrefs[1..] {
        context.push((r, ql as u32));
    }
    for (&l, &n) in others.iter().zip(&groups) {
        for r in train_refs(store, base_class(store, l), n, rng)? {
            context.push((r, l as u32));
        }
    }
    rng.shuffle(&mut context);
    Ok(Episode {
        context,
        query: qrefs[0],
        target: ql as u32,
        provenance: Provenance {
            kind: EpisodeKind::Bursty,
            swapped: false,
            inst_copy: false,
        },
        remap: Vec::new(),
    })
}

/// Replaces every query-class context item by the query exemplar itself.
pub fn apply_inst_copy(mut episode: Episode) -> Result<Episode> {
    if episode.provenance.kind == EpisodeKind::Standard {
        return Err(Error::Recipe("exact copies need a bursty episode".into()));
    }
    if !episode.has_query_class_context() {
        return Err(Error::Recipe("episode has no query-class context item".into()));
    }
    let q = episode.query;
    for (r, _) in &mut episode.context {
        if r.class == q.class {
            *r = q;
        }
    }
    episode.provenance.inst_copy = true;
    Ok(episode)
}

/// With probability `p`, relabels the query class (target and all its context
/// items) with a uniformly chosen different base label. Always consumes one
/// Bernoulli draw, plus one label draw when the swap happens.
pub fn apply_label_swap(
    mut episode: Episode,
    store: &ExemplarStore,
    rng: &mut RngStream,
    p: f64,
) -> Result<Episode> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Recipe("swap probability outside [0, 1]".into()));
    }
    if !rng.bernoulli(p) {
        return Ok(episode);
    }
    let n = store.base_classes().len();
    if n < 2 {
        return Err(Error::Recipe("label swap needs at least two base classes".into()));
    }
    let original = episode.target;
    let mut new = rng.below(n - 1) as u32;
    if new >= original {
        new += 1;
    }
    for (r, l) in &mut episode.context {
        if r.class == episode.query.class {
            *l = new;
        }
    }
    episode.target = new;
    episode.provenance.swapped = true;
    Ok(episode)
}

/// Everything needed to draw training batches deterministically.
#[derive(Clone, Debug)]
pub struct BatchSampler<'a> {
    pub store: &'a ExemplarStore,
    pub table: &'a ClassTable,
    pub mix: TrainingMix,
    pub recipe: Recipe,
    pub pairs: usize,
}

impl BatchSampler<'_> {
    /// Episode for one batch slot; depends only on `(seed, step, slot)`.
    pub fn slot(&self, seed: u64, step: u64, slot: usize) -> Result<Episode> {
        let mut rng = RngStream::derive(seed, &[purpose::BATCH, step, slot as u64]);
        let bursty = self.recipe.variant == Variant::Bursty && rng.bernoulli(self.mix.p_bursty);
        let mut ep = if bursty {
            let ep = build_bursty(self.store, self.table, &self.recipe, &mut rng)?;
            if self.recipe.inst_copy && rng.bernoulli(self.recipe.inst_copy_prob) {
                apply_inst_copy(ep)?
            } else {
                ep
            }
        } else {
            build_standard(self.store, self.table, self.pairs, &mut rng)?
        };
        ep = apply_label_swap(ep, self.store, &mut rng, self.mix.p_label_swap)?;
        Ok(ep)
    }

    pub fn batch(&self, seed: u64, step: u64) -> Result<Vec<Episode>> {
        (0..self.mix.batch_size)
            .map(|s| self.slot(seed, step, s))
            .collect()
    }
}

/// Batch for `step`: each slot is bursty with probability `p_bursty` (standard
/// recipes always give standard episodes), exact copies follow the recipe, and
/// label swapping applies to all slots alike.
pub fn sample_training_batch(
    store: &ExemplarStore,
    table: &ClassTable,
    mix: TrainingMix,
    recipe: &Recipe,
    pairs: usize,
    seed: u64,
    step: u64,
) -> Result<Vec<Episode>> {
    mix.validate()?;
    recipe.validate(pairs)?;
    BatchSampler {
        store,
        table,
        mix,
        recipe: recipe.clone(),
        pairs,
    }
    .batch(seed, step)
}

/// k-way n-shot episode over novel classes with labels remapped onto `0..k`.
pub fn build_icl_eval(store: &ExemplarStore, task: EvalTask, rng: &mut RngStream) -> Result<Episode> {
    let novel = store.novel_classes();
    if task.ways == 0 || task.shots == 0 {
        return Err(Error::Eval("ways and shots must be positive".into()));
    }
    if novel.len() < task.ways {
        return Err(Error::Eval(format!(
            "{}-way task needs {} novel classes, store has {}",
            task.ways,
            task.ways,
            novel.len()
        )));
    }
    let picked = rng.choose_distinct(novel.len(), task.ways);
    let mut perm: Vec<u32> = (0..task.ways as u32).collect();
    rng.shuffle(&mut perm);
    let qi = rng.below(task.ways);
    let mut context = Vec::with_capacity(task.pairs());
    let mut remap = Vec::with_capacity(task.ways);
    let mut query = None;
    for (j, &pi) in picked.iter().enumerate() {
        let class = novel[pi];
        let len = store.classes()[class as usize].len();
        let need = task.shots + usize::from(j == qi);
        if len < need {
            return Err(Error::Eval(format!(
                "novel class at position {class} has {len} exemplars, need {need}"
            )));
        }
        let idx = rng.choose_distinct(len, need);
        for &i in &idx[..task.shots] {
            context.push((ExemplarRef::new(class as usize, i), perm[j]));
        }
        if j == qi {
            query = Some(ExemplarRef::new(class as usize, idx[task.shots]));
        }
        remap.push((class, perm[j]));
    }
    rng.shuffle(&mut context);
    Ok(Episode {
        context,
        query: query.expect("query class is among the picked classes"),
        target: perm[qi],
        provenance: Provenance {
            kind: EpisodeKind::IclEval,
            swapped: false,
            inst_copy: false,
        },
        remap,
    })
}

/// Standard-format episode whose query is a validation exemplar of a base
/// class absent from the context.
pub fn build_iwl_eval(store: &ExemplarStore, pairs: usize, rng: &mut RngStream) -> Result<Episode> {
    let base = store.base_classes();
    let eligible: Vec<usize> = (0..base.len())
        .filter(|&l| !store.validation_exemplars(base[l]).is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Eval("store has no validation exemplars".into()));
    }
    if base.len() < pairs + 1 {
        return Err(Error::Eval(format!(
            "need {} base classes, store has {}",
            pairs + 1,
            base.len()
        )));
    }
    let ql = eligible[rng.below(eligible.len())];
    let qclass = base[ql];
    let vals = store.validation_exemplars(qclass);
    let query = ExemplarRef {
        class: qclass,
        index: vals[rng.below(vals.len())],
    };
    let mut context = Vec::with_capacity(pairs);
    for l in rng.choose_distinct(base.len() - 1, pairs) {
        let l = if l >= ql { l + 1 } else { l };
        let r = train_refs(store, base[l], 1, rng).map_err(|e| Error::Eval(format!("{e}")))?[0];
        context.push((r, l as u32));
    }
    Ok(Episode {
        context,
        query,
        target: ql as u32,
        provenance: Provenance {
            kind: EpisodeKind::IwlEval,
            swapped: false,
            inst_copy: false,
        },
        remap: Vec::new(),
    })
}
