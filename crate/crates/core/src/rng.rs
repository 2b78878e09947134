//! Counter-based random streams.
//!
//! A draw is addressed by `(seed, stream, counter)`: the value at a given
//! triple never depends on what was drawn before, so any batch slot, episode
//! or parameter tensor can get its own stream and be regenerated in
//! isolation.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Mixes several words into one stream id (splitmix64 finalizer chain).
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h = mix64(h ^ mix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream purposes, so that e.g. parameter init and batch sampling under the
/// same seed never share draws.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const SUITE: u64 = 3;
    pub const STORE: u64 = 4;
    pub const SPLIT: u64 = 5;
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self::at(seed, stream, 0)
    }

    /// Stream positioned at `counter` 64-bit draws from its start.
    pub fn at(seed: u64, stream: u64, counter: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        inner.set_word_pos(u128::from(counter) * 2);
        Self {
            seed,
            stream,
            counter,
            inner,
        }
    }

    /// Child stream keyed by `parts` under the same seed.
    pub fn derive(seed: u64, parts: &[u64]) -> Self {
        Self::new(seed, stream_id(parts))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` without modulo bias. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        // Always consume a draw so stream positions do not depend on p.
        let u = self.uniform();
        u < p
    }

    /// Standard normal via Box-Muller; consumes exactly two draws.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    /// Normal with the given std, redrawn until it lies within ±2 std.
    pub fn truncated_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "choose_distinct: k > n");
        if k * 4 < n {
            let mut out: Vec<usize> = Vec::with_capacity(k);
            while out.len() < k {
                let c = self.below(n);
                if !out.contains(&c) {
                    out.push(c);
                }
            }
            out
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            for i in 0..k {
                let j = i + self.below(n - i);
                all.swap(i, j);
            }
            all.truncate(k);
            all
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_is_a_function_of_the_triple() {
        let mut a = RngStream::new(7, 3);
        let seq: Vec<u64> = (0..10).map(|_| a.next_u64()).collect();
        for (c, &v) in seq.iter().enumerate() {
            let mut b = RngStream::at(7, 3, c as u64);
            assert_eq!(b.next_u64(), v);
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(7, 1);
        let mut b = RngStream::new(7, 2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn below_is_in_range_and_covers() {
        let mut r = RngStream::new(1, 1);
        let mut seen = [false; 7];
        for _ in 0..500 {
            let v = r.below(7);
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut r = RngStream::new(2, 9);
        for _ in 0..10_000 {
            assert!(r.truncated_normal(0.02).abs() <= 0.04 + 1e-12);
        }
    }

    #[test]
    fn choose_distinct_has_no_repeats() {
        let mut r = RngStream::new(3, 3);
        for &(n, k) in &[(10, 10), (100, 9), (5, 2)] {
            let mut v = r.choose_distinct(n, k);
            v.sort_unstable();
            v.dedup();
            assert_eq!(v.len(), k);
        }
    }
}
