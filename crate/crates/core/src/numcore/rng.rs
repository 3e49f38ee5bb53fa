//! Seeded random streams.
//!
//! The generator is ChaCha8 (counter based, platform independent) keyed from
//! a 64-bit seed. Normal deviates use the Box–Muller transform evaluated with
//! the pure-Rust `libm` routines, so a given seed yields the same bits on
//! every platform. Each transform produces a pair; the second deviate is
//! cached and returned by the next call.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of parent seed `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    core: ChaCha8Rng,
    spare: Option<f64>,
    draws: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            core: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words consumed so far.
    pub fn position(&self) -> u64 {
        self.draws
    }

    /// Independent stream keyed by `(seed, stream)`; does not advance `self`.
    pub fn derive(&self, stream: u64) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.core.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1].
    fn uniform_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let phi = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(phi));
        r * libm::cos(phi)
    }

    /// Uniform integer in `0..bound` by rejection sampling.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "below() needs a positive bound");
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, uniformly without replacement,
    /// returned in ascending order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n} without replacement");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
        assert_eq!(a.position(), b.position());
    }

    #[test]
    fn derived_streams_are_distinct() {
        let root = SeededRng::new(1);
        let mut a = root.derive(0);
        let mut b = root.derive(1);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(root.position(), 0);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SeededRng::new(5);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[rng.below(7)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800), "{seen:?}");
    }

    #[test]
    fn sample_indices_distinct_sorted() {
        let mut rng = SeededRng::new(9);
        let idx = rng.sample_indices(50, 20);
        assert_eq!(idx.len(), 20);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 50));
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SeededRng::new(2);
        let mut v: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut s = v.clone();
        s.sort_unstable();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
