//! Seeded random sampling. Every random draw in the crate goes through a
//! [`ChaCha8Rng`] built from an explicit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::tensor::Matrix;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-seed for stream `stream` of `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Continuous distribution for frozen weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDist {
    /// Uniform on (-1, 1).
    #[default]
    Uniform,
    StandardNormal,
}

impl WeightDist {
    pub fn sample<T: Real>(self, rng: &mut SeededRng) -> T {
        match self {
            WeightDist::Uniform => uniform(rng, -1.0, 1.0),
            WeightDist::StandardNormal => normal(rng),
        }
    }

    pub fn matrix<T: Real>(self, rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| self.sample(rng))
    }
}

pub fn uniform<T: Real>(rng: &mut SeededRng, lo: f64, hi: f64) -> T {
    T::lit(rng.random_range(lo..hi))
}

pub fn normal<T: Real>(rng: &mut SeededRng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

pub fn uniform_vec<T: Real>(rng: &mut SeededRng, len: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..len).map(|_| uniform(rng, lo, hi)).collect()
}

pub fn normal_vec<T: Real>(rng: &mut SeededRng, len: usize) -> Vec<T> {
    (0..len).map(|_| normal(rng)).collect()
}

/// Uniform draw from the ball of the given radius: a Gaussian direction scaled
/// by `radius · U^(1/d)`.
pub fn unit_ball_sample<T: Real>(rng: &mut SeededRng, dim: usize, radius: T) -> Vec<T> {
    loop {
        let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let r = radius.to_f64_lossy() * u.powf(1.0 / dim as f64);
        return z.iter().map(|v| T::lit(v / norm * r)).collect();
    }
}

pub fn bernoulli(rng: &mut SeededRng, p: f64) -> bool {
    rng.random::<f64>() < p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_agree() {
        let a: Vec<f64> = uniform_vec(&mut seeded_rng(7), 16, -1.0, 1.0);
        let b: Vec<f64> = uniform_vec(&mut seeded_rng(7), 16, -1.0, 1.0);
        assert_eq!(a, b);
        let c: Vec<f64> = uniform_vec(&mut seeded_rng(8), 16, -1.0, 1.0);
        assert_ne!(a, c);
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        let s: Vec<u64> = (0..100).map(|k| derive_seed(42, k)).collect();
        let mut dedup = s.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), s.len());
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = seeded_rng(3);
        for _ in 0..1000 {
            let x: Vec<f64> = unit_ball_sample(&mut rng, 5, 2.0);
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 2.0 + 1e-12);
        }
    }
}
