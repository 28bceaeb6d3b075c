//! Seeded random streams.
//!
//! Every stream is a xoshiro256++ generator seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Uniforms take the top 53 bits of
//! each output word; Gaussians use the Box–Muller transform on consecutive
//! uniform pairs, caching the second variate.
//!
//! Seeds for sub-tasks are derived as `fnv1a64(task) ^ seed`, and per-item
//! seeds (Monte Carlo trials, samples) as `splitmix64(task_seed ^ splitmix64(index))`,
//! so results never depend on scheduling order.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a hash of a task name.
pub fn fnv1a64(name: &str) -> u64 {
    name.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// One SplitMix64 output for the given state.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named task under a global seed.
pub fn task_seed(seed: u64, task: &str) -> u64 {
    fnv1a64(task) ^ seed
}

/// Seed for item `index` of a task stream.
pub fn item_seed(task_seed: u64, index: u64) -> u64 {
    splitmix64(task_seed ^ splitmix64(index))
}

/// Deterministic uniform / Gaussian stream.
#[derive(Clone, Debug)]
pub struct GatsRng {
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl GatsRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn for_task(seed: u64, task: &str) -> Self {
        Self::new(task_seed(seed, task))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[a, b)`.
    pub fn uniform_range(&mut self, a: f64, b: f64) -> f64 {
        a + (b - a) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal variate (Box–Muller).
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }

    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = GatsRng::new(42);
        let mut b = GatsRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
        assert_ne!(GatsRng::new(1).next_u64(), GatsRng::new(2).next_u64());
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = GatsRng::new(7);
        let n = 200_000;
        let xs = rng.gaussian_vec(n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn item_seeds_differ() {
        let t = task_seed(7, "mc");
        assert_ne!(item_seed(t, 0), item_seed(t, 1));
        assert_ne!(task_seed(7, "a"), task_seed(7, "b"));
    }
}
