use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub seed: u64,
    pub split: String,
    pub value: f64,
}

/// Append-only metric rows; steps increase strictly per `(seed, split)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    rows: Vec<MetricRow>,
    last: BTreeMap<(u64, String), u64>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, seed: u64, split: &str, value: f64) -> Result<()> {
        let key = (seed, String::from(split));
        if let Some(&prev) = self.last.get(&key) {
            if step <= prev {
                return Err(Error::Series(format!(
                    "{split} for seed {seed}: step {step} after step {prev}"
                )));
            }
        }
        self.last.insert(key, step);
        self.rows.push(MetricRow {
            step,
            seed,
            split: split.into(),
            value,
        });
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(step, value)` pairs of one split for one seed.
    pub fn series(&self, seed: u64, split: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.seed == seed && r.split == split)
            .map(|r| (r.step, r.value))
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn splits(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.split.clone()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Drops all rows with `step > max_step` (used when resuming).
    pub fn truncate_after(&mut self, max_step: u64) {
        self.rows.retain(|r| r.step <= max_step);
        self.last.clear();
        for r in &self.rows {
            self.last.insert((r.seed, r.split.clone()), r.step);
        }
    }

    pub fn extend(&mut self, other: &MetricLog) -> Result<()> {
        for r in &other.rows {
            self.push(r.step, r.seed, &r.split, r.value)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub step: u64,
    pub split: String,
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
    pub runs: usize,
}

/// Per-split, per-step mean and population std across logs. Every log must
/// report a split on the same step grid; otherwise the offending seeds are
/// listed in the error.
pub fn aggregate_runs(logs: &[MetricLog]) -> Result<Vec<AggregateRow>> {
    if logs.is_empty() {
        return Err(Error::Aggregate {
            detail: "no logs to aggregate".into(),
            seeds: Vec::new(),
        });
    }
    let mut splits: Vec<String> = logs.iter().flat_map(|l| l.splits()).collect();
    splits.sort_unstable();
    splits.dedup();
    let mut out = Vec::new();
    for split in &splits {
        let per_log: Vec<(u64, Vec<(u64, f64)>)> = logs
            .iter()
            .map(|l| {
                let seed = l.seeds().first().copied().unwrap_or(0);
                let rows: Vec<(u64, f64)> = l.rows.iter().filter(|r| &r.split == split).map(|r| (r.step, r.value)).collect();
                (seed, rows)
            })
            .collect();
        let grid: Vec<u64> = per_log[0].1.iter().map(|p| p.0).collect();
        let bad: Vec<u64> = per_log
            .iter()
            .filter(|(_, rows)| rows.len() != grid.len() || rows.iter().zip(&grid).any(|(r, g)| r.0 != *g))
            .map(|(s, _)| *s)
            .collect();
        if !bad.is_empty() {
            let mut seeds: Vec<u64> = per_log.iter().map(|p| p.0).collect();
            if bad.len() < per_log.len() {
                seeds = bad;
            }
            return Err(Error::Aggregate {
                detail: format!("step grids of split {split} differ"),
                seeds,
            });
        }
        for (i, &step) in grid.iter().enumerate() {
            let n = per_log.len() as f64;
            let mean = per_log.iter().map(|p| p.1[i].1).sum::<f64>() / n;
            let var = per_log.iter().map(|p| (p.1[i].1 - mean) * (p.1[i].1 - mean)).sum::<f64>() / n;
            out.push(AggregateRow {
                step,
                split: split.clone(),
                mean,
                std: libm::sqrt(var),
                runs: per_log.len(),
            });
        }
    }
    Ok(out)
}
