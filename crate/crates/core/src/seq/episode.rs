use alloc::vec::Vec;

use crate::data::ExemplarRef;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EpisodeKind {
    Standard = 0,
    Bursty = 1,
    IclEval = 2,
    IwlEval = 3,
}

impl EpisodeKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => EpisodeKind::Standard,
            1 => EpisodeKind::Bursty,
            2 => EpisodeKind::IclEval,
            3 => EpisodeKind::IwlEval,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub kind: EpisodeKind,
    pub swapped: bool,
    pub inst_copy: bool,
}

/// One sequence: `context.len()` (exemplar, label) pairs and a query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub context: Vec<(ExemplarRef, u32)>,
    pub query: ExemplarRef,
    /// Label the query must be classified as (after any swap or remap).
    pub target: u32,
    pub provenance: Provenance,
    /// Eval only: store position of each chosen novel class and its label.
    pub remap: Vec<(u32, u32)>,
}

impl Episode {
    pub fn pairs(&self) -> usize {
        self.context.len()
    }

    pub fn tokens(&self) -> usize {
        2 * self.context.len() + 1
    }

    /// Context positions whose exemplar belongs to the query's class.
    pub fn query_class_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.context
            .iter()
            .enumerate()
            .filter(move |(_, (r, _))| r.class == self.query.class)
            .map(|(i, _)| i)
    }

    pub fn has_query_class_context(&self) -> bool {
        self.query_class_positions().next().is_some()
    }
}
