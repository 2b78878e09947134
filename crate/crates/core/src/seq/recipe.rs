use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

/// Class-count pattern of a bursty context, e.g. `3xQ-3xA-B-C`: three items
/// of the query class, three of class A, one each of B and C.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BurstFormat {
    /// `(is_query_class, count)` per group, in written order.
    groups: Vec<(bool, usize)>,
}

impl BurstFormat {
    pub fn query_reps(&self) -> usize {
        self.groups.iter().filter(|g| g.0).map(|g| g.1).sum()
    }

    /// Counts of the non-query groups, each a distinct distractor class.
    pub fn distractor_groups(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().filter(|g| !g.0).map(|g| g.1)
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.1).sum()
    }

    /// High burstiness: `3xQ-3xA-B-C`.
    pub fn high() -> Self {
        "3xQ-3xA-B-C".parse().expect("valid format")
    }

    /// Low burstiness: a single query-class item among seven distinct classes.
    pub fn low() -> Self {
        "Q-A-B-C-D-E-F-G".parse().expect("valid format")
    }
}

impl FromStr for BurstFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut groups = Vec::new();
        let mut names: Vec<String> = Vec::new();
        for part in s.split('-') {
            let part = part.trim();
            let (count, name) = match part.split_once('x') {
                Some((n, name)) => (
                    n.parse::<usize>()
                        .map_err(|_| Error::Recipe(format!("bad repeat count in {part:?}")))?,
                    name,
                ),
                None => (1, part),
            };
            if name.is_empty() || count == 0 {
                return Err(Error::Recipe(format!("bad group {part:?} in {s:?}")));
            }
            if names.iter().any(|n| n == name) {
                return Err(Error::Recipe(format!("class {name:?} repeated in {s:?}")));
            }
            names.push(name.to_string());
            groups.push((name == "Q", count));
        }
        if !groups.iter().any(|g| g.0) {
            return Err(Error::Recipe(format!("format {s:?} has no query group Q")));
        }
        Ok(Self { groups })
    }
}

impl fmt::Display for BurstFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut letter = b'A';
        for (i, &(q, n)) in self.groups.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            if n > 1 {
                write!(f, "{n}x")?;
            }
            if q {
                f.write_str("Q")?;
            } else {
                write!(f, "{}", letter as char)?;
                letter += 1;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Standard,
    Bursty,
}

/// How in-context (bursty) training sequences are built.
#[derive(Clone, Debug, PartialEq)]
pub struct Recipe {
    pub variant: Variant,
    pub format: BurstFormat,
    pub inst_copy: bool,
    /// Chance that a bursty episode gets exact copies when `inst_copy` is set.
    pub inst_copy_prob: f64,
}

impl Recipe {
    pub fn standard() -> Self {
        Self {
            variant: Variant::Standard,
            format: BurstFormat::high(),
            inst_copy: false,
            inst_copy_prob: 0.0,
        }
    }

    pub fn bursty(format: BurstFormat, inst_copy: bool) -> Self {
        Self {
            variant: Variant::Bursty,
            format,
            inst_copy,
            inst_copy_prob: if inst_copy { 1.0 } else { 0.0 },
        }
    }

    pub fn query_reps(&self) -> usize {
        match self.variant {
            Variant::Standard => 0,
            Variant::Bursty => self.format.query_reps(),
        }
    }

    pub fn validate(&self, pairs: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.inst_copy_prob) {
            return Err(Error::Recipe("inst-copy probability outside [0, 1]".into()));
        }
        if self.variant == Variant::Bursty && self.format.total() != pairs {
            return Err(Error::Recipe(format!(
                "format {} fills {} slots, context has {pairs}",
                self.format,
                self.format.total()
            )));
        }
        Ok(())
    }
}

/// Per-slot composition of a training batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingMix {
    pub p_bursty: f64,
    pub p_label_swap: f64,
    pub batch_size: usize,
}

impl Default for TrainingMix {
    fn default() -> Self {
        Self {
            p_bursty: 0.9,
            p_label_swap: 0.0,
            batch_size: 16,
        }
    }
}

impl TrainingMix {
    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_bursty) || !ok(self.p_label_swap) {
            return Err(Error::Config("mix probabilities must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// k-way n-shot few-shot task over novel classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EvalTask {
    pub ways: usize,
    pub shots: usize,
}

impl EvalTask {
    pub const TWO_WAY_FOUR_SHOT: EvalTask = EvalTask { ways: 2, shots: 4 };
    pub const FOUR_WAY_TWO_SHOT: EvalTask = EvalTask { ways: 4, shots: 2 };
    pub const THREE_WAY_THREE_SHOT: EvalTask = EvalTask { ways: 3, shots: 3 };

    pub fn pairs(&self) -> usize {
        self.ways * self.shots
    }

    /// Metric split name, e.g. `icl-2w4s`.
    pub fn split_name(&self) -> String {
        format!("icl-{}w{}s", self.ways, self.shots)
    }
}
