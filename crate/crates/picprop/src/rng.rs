//! Seeded randomness helpers.
//!
//! Every stochastic routine in the crate takes an explicit `u64` seed and
//! derives a ChaCha8 stream from it, so runs are reproducible bit-for-bit.
//! Independent parallel jobs derive per-job seeds with [`mix`] instead of
//! sharing a stream, which keeps results independent of worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a child seed from a base seed and a job index (splitmix64 finalizer).
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal via Box-Muller.
pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    loop {
        let u1: f64 = rng.random();
        if u1 > 0.0 {
            let u2: f64 = rng.random();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Uniform on [lo, hi).
pub fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Uniform point in the unit ball of dimension `dim` (direction from
/// normalized Gaussians, radius from the volume-correct power law).
pub fn unit_ball(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let u: f64 = rng.random();
            let r = u.powf(1.0 / dim as f64);
            return g.iter().map(|x| x / norm * r).collect();
        }
    }
}
