//! Seeded random streams.
//!
//! `(seed, stream)` selects a ChaCha8 keystream: the seed is expanded with
//! `SeedableRng::seed_from_u64` and the stream index goes to the cipher's
//! stream word. Normals come from Box–Muller on two open-interval uniforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recorded in run manifests.
pub const RNG_ALGORITHM: &str = "chacha8(seed_from_u64, set_stream); normals: box-muller";

pub type StreamRng = ChaCha8Rng;

pub fn rng(seed: u64, stream: u64) -> StreamRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Uniform on the open interval (0, 1).
fn open_unit(r: &mut StreamRng) -> f64 {
    loop {
        let u: f64 = r.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[derive(Debug)]
pub struct NormalSampler {
    rng: StreamRng,
    spare: Option<f64>,
}

impl NormalSampler {
    pub fn new(seed: u64, stream: u64) -> Self {
        NormalSampler {
            rng: rng(seed, stream),
            spare: None,
        }
    }

    pub fn from_rng(rng: StreamRng) -> Self {
        NormalSampler { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = open_unit(&mut self.rng);
        let u2: f64 = self.rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * th.sin());
        r * th.cos()
    }

    pub fn fill(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample()).collect()
    }

    /// Uniform on [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng_mut(&mut self) -> &mut StreamRng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_draws() {
        let a: Vec<u64> = (0..1000).scan(rng(7, 3), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..1000).scan(rng(7, 3), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let a: Vec<u64> = (0..16).scan(rng(7, 0), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..16).scan(rng(7, 1), |r, _| Some(r.random())).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn box_muller_moments() {
        let xs = NormalSampler::new(11, 0).fill(100_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
