use alloc::vec::Vec;

use super::episode::Episode;
use super::recipe::EvalTask;
use crate::rng::purpose;
use crate::{Error, Result, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SuiteKind {
    Icl(EvalTask),
    Iwl { pairs: usize },
}

impl SuiteKind {
    pub fn pairs(&self) -> usize {
        match *self {
            SuiteKind::Icl(t) => t.pairs(),
            SuiteKind::Iwl { pairs } => pairs,
        }
    }
}

/// Frozen evaluation episodes, reused unchanged across checkpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSuite {
    pub kind: SuiteKind,
    pub seed: u64,
    pub episodes: Vec<Episode>,
}

/// Episode `i` is built from its own stream, so suites of different sizes
/// share their common prefix.
pub fn presample_suite<B>(mut builder: B, kind: SuiteKind, count: usize, seed: u64) -> Result<EvalSuite>
where
    B: FnMut(&mut RngStream) -> Result<Episode>,
{
    if count == 0 {
        return Err(Error::Eval("suite needs at least one episode".into()));
    }
    let episodes = (0..count as u64)
        .map(|i| builder(&mut RngStream::derive(seed, &[purpose::SUITE, i])))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSuite {
        kind,
        seed,
        episodes,
    })
}
