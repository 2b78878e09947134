use alloc::format;

use crate::data::ExemplarStore;
use crate::model::{BatchInput, Mode, Model, Tape};
use crate::seq::{Episode, EvalSuite, SuiteKind};
use crate::{Error, Real, Result};

/// Episodes per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prediction {
    /// Argmax over labels `0..k` only.
    Restricted(usize),
    /// Argmax over the whole vocabulary.
    Full,
}

/// Arg-max label under `rule`; ties go to the lowest label.
pub fn predict<F: Real>(logits: &[F], rule: Prediction) -> usize {
    let row = match rule {
        Prediction::Restricted(k) => &logits[..k.min(logits.len())],
        Prediction::Full => logits,
    };
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of episodes whose query is classified as its target.
pub fn count_correct<F: Real>(
    model: &Model<F>,
    store: &ExemplarStore,
    episodes: &[Episode],
    rule: Prediction,
    tape: &mut Tape<F>,
) -> Result<usize> {
    let mut correct = 0;
    for chunk in episodes.chunks(EVAL_CHUNK) {
        let input = BatchInput::from_episodes(store, chunk)?;
        model.forward(&input, Mode::LastToken, tape)?;
        for (b, ep) in chunk.iter().enumerate() {
            if predict(tape.last_logits(b), rule) == ep.target as usize {
                correct += 1;
            }
        }
    }
    Ok(correct)
}

/// Few-shot accuracy on a k-way suite, restricted to the k remapped labels
/// unless `full_vocab` is set.
pub fn evaluate_icl<F: Real>(model: &Model<F>, store: &ExemplarStore, suite: &EvalSuite, full_vocab: bool) -> Result<f64> {
    let SuiteKind::Icl(task) = suite.kind else {
        return Err(Error::Eval("suite is not a few-shot suite".into()));
    };
    if let Some(ep) = suite.episodes.iter().find(|e| e.target as usize >= task.ways) {
        return Err(Error::Eval(format!("episode target {} outside a {}-way task", ep.target, task.ways)));
    }
    let rule = if full_vocab {
        Prediction::Full
    } else {
        Prediction::Restricted(task.ways)
    };
    let c = count_correct(model, store, &suite.episodes, rule, &mut Tape::new())?;
    Ok(c as f64 / suite.episodes.len() as f64)
}

/// Full-vocabulary accuracy on held-out exemplars of training classes.
pub fn evaluate_iwl<F: Real>(model: &Model<F>, store: &ExemplarStore, suite: &EvalSuite) -> Result<f64> {
    check_iwl(suite)?;
    let c = count_correct(model, store, &suite.episodes, Prediction::Full, &mut Tape::new())?;
    Ok(c as f64 / suite.episodes.len() as f64)
}

pub(crate) fn check_iwl(suite: &EvalSuite) -> Result<()> {
    if !matches!(suite.kind, SuiteKind::Iwl { .. }) {
        return Err(Error::Eval("suite is not an in-weights suite".into()));
    }
    if let Some(i) = suite.episodes.iter().position(Episode::has_query_class_context) {
        return Err(Error::Eval(format!("episode {i} has a query-class item in its context")));
    }
    Ok(())
}
