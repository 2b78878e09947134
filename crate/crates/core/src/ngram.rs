//! n-gram repetition counts inside token windows.
//!
//! Within a window, the repetitions of order `n` are the n-gram occurrences
//! beyond the first of each distinct n-gram (overlapping occurrences count).
//! n-grams are bucketed by a polynomial rolling hash modulo `2^61 - 1`;
//! equal hashes are confirmed by comparing the token slices, so the counts
//! are exact.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

const MOD: u64 = (1 << 61) - 1;
const BASE: u64 = 0x1f3d_5b79_a4c3_e2b1 % MOD;

#[inline]
fn mul_mod(a: u64, b: u64) -> u64 {
    let p = u128::from(a) * u128::from(b);
    let lo = (p as u64) & MOD;
    let hi = (p >> 61) as u64;
    let s = lo + hi;
    if s >= MOD {
        s - MOD
    } else {
        s
    }
}

#[inline]
fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MOD {
        s - MOD
    } else {
        s
    }
}

/// Hash of every n-gram start position `0..=len - n`.
fn rolling_hashes(tokens: &[u32], n: usize) -> Vec<u64> {
    if tokens.len() < n {
        return Vec::new();
    }
    let mut top = 1u64;
    for _ in 1..n {
        top = mul_mod(top, BASE);
    }
    let sym = |t: u32| u64::from(t) + 1;
    let mut h = 0u64;
    for &t in &tokens[..n] {
        h = add_mod(mul_mod(h, BASE), sym(t));
    }
    let mut out = Vec::with_capacity(tokens.len() - n + 1);
    out.push(h);
    for p in 1..=tokens.len() - n {
        let drop = mul_mod(sym(tokens[p - 1]), top);
        h = add_mod(h, MOD - drop);
        h = add_mod(mul_mod(h, BASE), sym(tokens[p + n - 1]));
        out.push(h);
    }
    out
}

/// How windows tile the stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WindowMode {
    /// Consecutive non-overlapping blocks; a short tail is dropped.
    #[default]
    Blocked,
    /// Every start position `0..=len - window`.
    Sliding,
}

fn check(len: usize, window: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Param("n-gram order must be positive".into()));
    }
    if window < n {
        return Err(Error::Param(format!("window {window} shorter than n-gram order {n}")));
    }
    if len < window {
        return Err(Error::Param(format!("stream of {len} tokens is shorter than window {window}")));
    }
    Ok(())
}

/// Distinct n-grams among `positions` (pairs of hash and start position,
/// sorted by hash), verified by slice comparison.
fn distinct_sorted(tokens: &[u32], n: usize, keyed: &[(u64, u32)], reps: &mut Vec<usize>) -> usize {
    let mut distinct = 0;
    let mut i = 0;
    while i < keyed.len() {
        let mut j = i + 1;
        while j < keyed.len() && keyed[j].0 == keyed[i].0 {
            j += 1;
        }
        if j - i == 1 {
            distinct += 1;
        } else {
            reps.clear();
            for &(_, p) in &keyed[i..j] {
                let p = p as usize;
                let s = &tokens[p..p + n];
                if !reps.iter().any(|&r| &tokens[r..r + n] == s) {
                    reps.push(p);
                }
            }
            distinct += reps.len();
        }
        i = j;
    }
    distinct
}

/// Repetition count of each non-overlapping window.
pub fn window_counts(tokens: &[u32], window: usize, n: usize) -> Result<Vec<u64>> {
    check(tokens.len(), window, n)?;
    let hashes = rolling_hashes(tokens, n);
    let per = window - n + 1;
    let mut keyed: Vec<(u64, u32)> = Vec::with_capacity(per);
    let mut reps = Vec::new();
    let mut out = Vec::with_capacity(tokens.len() / window);
    for w in 0..tokens.len() / window {
        let start = w * window;
        keyed.clear();
        keyed.extend((start..start + per).map(|p| (hashes[p], p as u32)));
        keyed.sort_unstable();
        let distinct = distinct_sorted(tokens, n, &keyed, &mut reps);
        out.push((per - distinct) as u64);
    }
    Ok(out)
}

/// Global dense id per n-gram position: equal n-grams share an id.
fn dense_ids(tokens: &[u32], n: usize) -> (Vec<u32>, usize) {
    let hashes = rolling_hashes(tokens, n);
    let mut keyed: Vec<(u64, u32)> = hashes.iter().enumerate().map(|(p, &h)| (h, p as u32)).collect();
    keyed.sort_unstable();
    let mut ids = vec![0u32; hashes.len()];
    let mut next = 0u32;
    let mut reps: Vec<(usize, u32)> = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let mut j = i + 1;
        while j < keyed.len() && keyed[j].0 == keyed[i].0 {
            j += 1;
        }
        reps.clear();
        for &(_, p) in &keyed[i..j] {
            let p = p as usize;
            let s = &tokens[p..p + n];
            let id = match reps.iter().find(|(r, _)| &tokens[*r..*r + n] == s) {
                Some(&(_, id)) => id,
                None => {
                    reps.push((p, next));
                    next += 1;
                    next - 1
                }
            };
            ids[p] = id;
        }
        i = j;
    }
    (ids, next as usize)
}

/// Repetition count of every sliding window, maintained incrementally.
pub fn sliding_counts(tokens: &[u32], window: usize, n: usize) -> Result<Vec<u64>> {
    check(tokens.len(), window, n)?;
    let (ids, distinct_total) = dense_ids(tokens, n);
    let per = window - n + 1;
    let mut counts = vec![0u32; distinct_total];
    let mut distinct = 0usize;
    for &id in &ids[..per] {
        if counts[id as usize] == 0 {
            distinct += 1;
        }
        counts[id as usize] += 1;
    }
    let mut out = Vec::with_capacity(tokens.len() - window + 1);
    out.push((per - distinct) as u64);
    for s in 1..=tokens.len() - window {
        let gone = ids[s - 1] as usize;
        counts[gone] -= 1;
        if counts[gone] == 0 {
            distinct -= 1;
        }
        let new = ids[s + per - 1] as usize;
        if counts[new] == 0 {
            distinct += 1;
        }
        counts[new] += 1;
        out.push((per - distinct) as u64);
    }
    Ok(out)
}

/// Mean repetitions of order `n` per window.
pub fn window_repetitions(tokens: &[u32], window: usize, n: usize, mode: WindowMode) -> Result<f64> {
    let counts = match mode {
        WindowMode::Blocked => window_counts(tokens, window, n)?,
        WindowMode::Sliding => sliding_counts(tokens, window, n)?,
    };
    Ok(counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramRow {
    pub n: usize,
    pub avg_repetitions: f64,
    pub windows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramReport {
    pub window: usize,
    pub mode: WindowMode,
    pub rows: Vec<NGramRow>,
}

pub const DEFAULT_WINDOW: usize = 2048;
pub const DEFAULT_ORDERS: [usize; 7] = [1, 2, 3, 5, 10, 15, 20];

/// One [`window_repetitions`] pass per order.
pub fn report(tokens: &[u32], window: usize, ns: &[usize], mode: WindowMode) -> Result<NGramReport> {
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let counts = match mode {
            WindowMode::Blocked => window_counts(tokens, window, n)?,
            WindowMode::Sliding => sliding_counts(tokens, window, n)?,
        };
        rows.push(NGramRow {
            n,
            avg_repetitions: counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64,
            windows: counts.len(),
        });
    }
    Ok(NGramReport { window, mode, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngStream;

    /// Occurrences beyond the first, by pairwise comparison.
    fn brute(win: &[u32], n: usize) -> u64 {
        let m = win.len() + 1 - n;
        let mut reps = 0;
        for i in 0..m {
            if (0..i).any(|j| win[j..j + n] == win[i..i + n]) {
                reps += 1;
            }
        }
        reps
    }

    fn brute_avg(tokens: &[u32], window: usize, n: usize, mode: WindowMode) -> f64 {
        let starts: Vec<usize> = match mode {
            WindowMode::Blocked => (0..tokens.len() / window).map(|w| w * window).collect(),
            WindowMode::Sliding => (0..=tokens.len() - window).collect(),
        };
        starts.iter().map(|&s| brute(&tokens[s..s + window], n) as f64).sum::<f64>() / starts.len() as f64
    }

    #[test]
    fn matches_brute_force_on_random_streams() {
        let mut rng = RngStream::new(42, 0);
        for _ in 0..1000 {
            let len = 1 + rng.below(64);
            let window = 1 + rng.below(16.min(len));
            let n = 1 + rng.below(4.min(window));
            let alphabet = 1 + rng.below(5) as u32;
            let tokens: Vec<u32> = (0..len).map(|_| rng.below(alphabet as usize) as u32).collect();
            for mode in [WindowMode::Blocked, WindowMode::Sliding] {
                let fast = window_repetitions(&tokens, window, n, mode).unwrap();
                assert_eq!(fast, brute_avg(&tokens, window, n, mode), "{tokens:?} w{window} n{n} {mode:?}");
            }
        }
    }

    #[test]
    fn degenerate_windows() {
        let same = vec![7u32; 2048];
        assert_eq!(window_repetitions(&same, 2048, 1, WindowMode::Blocked).unwrap(), 2047.0);
        let distinct: Vec<u32> = (0..4096).collect();
        assert_eq!(window_repetitions(&distinct, 2048, 1, WindowMode::Blocked).unwrap(), 0.0);
        assert!(matches!(window_repetitions(&distinct, 2, 3, WindowMode::Blocked), Err(Error::Param(_))));
        assert!(window_repetitions(&distinct[..10], 16, 1, WindowMode::Blocked).is_err());
        assert!(window_repetitions(&distinct, 16, 0, WindowMode::Blocked).is_err());
    }

    #[test]
    fn tail_is_dropped() {
        let tokens = [1, 1, 1, 2, 2, 2, 2];
        assert_eq!(window_counts(&tokens, 3, 1).unwrap(), vec![2, 2]);
    }

    #[test]
    fn permutation_changes_only_higher_orders() {
        let a = [1u32, 2, 1, 2, 3, 4];
        let b = [1u32, 1, 2, 2, 3, 4];
        assert_eq!(window_repetitions(&a, 6, 1, WindowMode::Blocked).unwrap(), 2.0);
        assert_eq!(window_repetitions(&b, 6, 1, WindowMode::Blocked).unwrap(), 2.0);
        assert_eq!(window_repetitions(&a, 6, 2, WindowMode::Blocked).unwrap(), 1.0);
        assert_eq!(window_repetitions(&b, 6, 2, WindowMode::Blocked).unwrap(), 0.0);
    }

    #[test]
    fn report_composes_per_order_calls() {
        let mut rng = RngStream::new(1, 1);
        let tokens: Vec<u32> = (0..5000).map(|_| rng.below(30) as u32).collect();
        let r = report(&tokens, 512, &DEFAULT_ORDERS, WindowMode::Blocked).unwrap();
        for row in &r.rows {
            assert_eq!(row.avg_repetitions, window_repetitions(&tokens, 512, row.n, WindowMode::Blocked).unwrap());
            assert_eq!(row.windows, 9);
        }
    }

    #[test]
    fn forced_hash_groups_are_split_exactly() {
        let tokens = [3u32, 4, 3, 4, 5];
        let keyed = [(1u64, 0u32), (1, 1), (1, 2), (1, 3)];
        let mut reps = Vec::new();
        assert_eq!(distinct_sorted(&tokens, 2, &keyed, &mut reps), 3);
    }
}
