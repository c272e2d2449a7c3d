//! Reproducible random streams.
//!
//! Every stream is ChaCha20 (the 20-round djb variant with a 64-bit block
//! counter and a 64-bit stream id). A root seed becomes the 256-bit key as
//! its little-endian bytes followed by zeros, and each subsystem draws from
//! its own stream id, so subsystems never share a stream. Conversions to
//! floats, bounded integers and permutations are defined here rather than
//! borrowed from a distribution library, which keeps the datasets
//! reproducible from any language with a ChaCha20 implementation.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids for the (seed, stream) split.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const PERMUTATION: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const JITTER: u64 = 7;
    pub const STAGE2_BATCH: u64 = 8;
    pub const STAGE2_PERMUTATION: u64 = 9;
    pub const EVALUATE_SPLIT: u64 = 10;
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self {
            inner,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// In-place Fisher–Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `pool`, drawn by a partial Fisher–Yates that
    /// leaves the chosen items at the front of `pool`.
    pub fn choose_from(&mut self, pool: &mut [usize], k: usize) -> Vec<usize> {
        let k = k.min(pool.len());
        for i in 0..k {
            let j = i + self.below(pool.len() - i);
            pool.swap(i, j);
        }
        pool[..k].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chacha20_zero_key_keystream() {
        // First keystream bytes for the all-zero key and nonce:
        // 76 b8 e0 ad a0 f1 3d 90 40 5d 6a e5 53 86 bd 28
        let mut rng = SeededRng::new(0, 0);
        assert_eq!(rng.next_u64(), 0x903d_f1a0_ade0_b876);
        assert_eq!(rng.next_u64(), 0x28bd_8653_e56a_5d40);
    }

    #[test]
    fn streams_are_independent_and_replayable() {
        let a: Vec<u64> = (0..4)
            .map({
                let mut r = SeededRng::new(7, streams::DATA);
                move |_| r.next_u64()
            })
            .collect();
        let b: Vec<u64> = (0..4)
            .map({
                let mut r = SeededRng::new(7, streams::DATA);
                move |_| r.next_u64()
            })
            .collect();
        let mut other = SeededRng::new(7, streams::INIT);
        assert_eq!(a, b);
        assert_ne!(a[0], other.next_u64());
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SeededRng::new(3, 0);
        let mut seen = [0usize; 5];
        for _ in 0..5000 {
            seen[rng.below(5)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 900 && c < 1100), "{seen:?}");
    }

    #[test]
    fn normal_moments() {
        let mut rng = SeededRng::new(11, 0);
        let xs: Vec<f64> = (0..20000).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }
}
