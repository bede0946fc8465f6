//! A nonlinear map that beats every linear one on an isotropic 2-D Gaussian:
//! keep the angle, replace the radius by its mean.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

use super::gaussian::{monte_carlo, MonteCarlo};

pub const MIN_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct PolarReport {
    pub tau: f64,
    /// Monte Carlo `E‖x − x̂‖²`.
    pub empirical: MonteCarlo,
    /// `(2 − π/2)τ²`.
    pub analytic: f64,
    /// Best linear error for the same data, `τ²`.
    pub linear: f64,
    /// Monte Carlo `E[r/τ]`, whose exact value is `√(π/2)`.
    pub mean_radius: MonteCarlo,
}

/// `(x, y) ~ N(0, τ²I)`, `F = (θ, r/τ)` with `θ` kept and `z = r/τ` replaced
/// by `√(π/2)`; the reconstruction is `τ√(π/2)(cos θ, sin θ)`.
pub fn polar_example(tau: f64, samples: usize, seed: u64) -> Result<PolarReport> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if samples < MIN_SAMPLES {
        return Err(Error::invalid(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    let prior = FRAC_PI_2.sqrt();
    let draw = |rng: &mut crate::rng::NormalSampler| (tau * rng.sample(), tau * rng.sample());
    let empirical = monte_carlo(samples, seed, |rng| {
        let (x, y) = draw(rng);
        let theta = y.atan2(x);
        let r_hat = tau * prior;
        Ok((x - r_hat * theta.cos()).powi(2) + (y - r_hat * theta.sin()).powi(2))
    })?;
    let mean_radius = monte_carlo(samples, seed, |rng| {
        let (x, y) = draw(rng);
        Ok(x.hypot(y) / tau)
    })?;
    Ok(PolarReport {
        tau,
        empirical,
        analytic: (2.0 - PI / 2.0) * tau * tau,
        linear: tau * tau,
        mean_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(polar_example(0.0, MIN_SAMPLES, 0).is_err());
        assert!(polar_example(1.0, MIN_SAMPLES - 1, 0).is_err());
    }

    #[test]
    fn scales_with_tau_squared() {
        let a = polar_example(1.0, 20_000, 5).unwrap();
        let b = polar_example(3.0, 20_000, 5).unwrap();
        // same draws, scaled
        assert!((b.empirical.mean - 9.0 * a.empirical.mean).abs() < 1e-9);
        assert!((a.mean_radius.mean - b.mean_radius.mean).abs() < 1e-12);
    }
}
