//! Pathwise check of the partial-Jacobian bound
//! `‖x − x̂‖² ≤ (∫₀¹ ‖Wᵀ D_z F⁻¹(y, z + t(z_f − z))‖²_F dt) · ‖z_f − z‖²`.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::NormalSampler;

use super::gaussian::{GaussianModel, MC_CHUNKS};
use super::maps::LatentMap;
use super::report::BoundReport;

/// Midpoint nodes on `[0, 1]`.
pub const QUADRATURE_NODES: usize = 16;
/// Central-difference step in latent space.
pub const FD_STEP: f64 = 1e-5;
/// Relative slack for finite-difference and quadrature error.
pub const AUDIT_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct AuditResult {
    /// Mean reconstruction error.
    pub lhs: f64,
    /// Mean of the pathwise right-hand side.
    pub rhs: f64,
    /// `E[rhs] / E‖z_f − z‖²`, the effective constant.
    pub constant: f64,
    /// Samples whose pathwise inequality failed beyond the slack.
    pub violations: usize,
    pub samples: usize,
}

impl AuditResult {
    pub fn report(&self, quantity: impl Into<String>) -> BoundReport {
        let mut r = BoundReport::at_most(quantity, self.rhs, self.lhs, self.samples, AUDIT_SLACK);
        r.pass &= self.violations == 0;
        r
    }
}

/// `∫₀¹ ‖D_z decode(y, ·)‖²_F` along the segment from `z` to `z_f`.
fn jacobian_energy(map: &dyn LatentMap, y: &DVector<f64>, z: &DVector<f64>, zf: &DVector<f64>) -> Result<f64> {
    let dz = zf - z;
    let mut total = 0.0;
    for k in 0..QUADRATURE_NODES {
        let t = (k as f64 + 0.5) / QUADRATURE_NODES as f64;
        let at = z + &dz * t;
        for j in 0..at.len() {
            let mut plus = at.clone();
            let mut minus = at.clone();
            plus[j] += FD_STEP;
            minus[j] -= FD_STEP;
            let col = (map.decode(y, &plus)? - map.decode(y, &minus)?) / (2.0 * FD_STEP);
            if !col.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("non-finite finite-difference Jacobian"));
            }
            total += col.norm_squared();
        }
    }
    Ok(total / QUADRATURE_NODES as f64)
}

/// Draws `x ~ g`, encodes, replaces `z` by `z_f ~ N(0, σ²I)` (`0` when
/// `σ = 0`) and compares both sides per sample. Chunk `k` uses stream `k`.
pub fn lemma_b1_audit(map: &dyn LatentMap, g: &GaussianModel, sigma: f64, samples: usize, seed: u64) -> Result<AuditResult> {
    if samples == 0 || !(sigma >= 0.0) || g.dim() != map.signal_len() {
        return Err(Error::invalid("audit needs samples, σ ≥ 0 and a map matching the model dimension"));
    }
    let nz = map.latent_len();
    let chunks = MC_CHUNKS.min(samples);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let count = samples / chunks + usize::from(k < samples % chunks);
            let mut rng = NormalSampler::new(seed, k as u64);
            let (mut lhs, mut rhs, mut dz2, mut bad) = (0.0, 0.0, 0.0, 0usize);
            for _ in 0..count {
                let x = g.sample(&mut rng);
                let (y, z) = map.encode(&x)?;
                let zf = if sigma > 0.0 {
                    DVector::from_vec(rng.fill(nz)) * sigma
                } else {
                    DVector::zeros(nz)
                };
                let err = (&x - map.decode(&y, &zf)?).norm_squared();
                let d2 = (&zf - &z).norm_squared();
                let bound = jacobian_energy(map, &y, &z, &zf)? * d2;
                if err > bound * (1.0 + AUDIT_SLACK) + 1e-12 {
                    bad += 1;
                }
                lhs += err;
                rhs += bound;
                dz2 += d2;
            }
            Ok((lhs, rhs, dz2, bad))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lhs, rhs, dz2, bad) = partial
        .iter()
        .fold((0.0, 0.0, 0.0, 0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2, a.3 + p.3));
    let n = samples as f64;
    Ok(AuditResult {
        lhs: lhs / n,
        rhs: rhs / n,
        constant: if dz2 > 0.0 { rhs / dz2 } else { 0.0 },
        violations: bad,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{BlockKind, FlowConfig, FlowModel};
    use crate::framelet::BankKind;
    use crate::theory::maps::FlowMap;

    #[test]
    fn identity_flow_is_tight_with_one_latent() {
        let g = GaussianModel::new(nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let model = FlowModel::new(FlowConfig::new(BankKind::Haar, &[2], 1, 1, BlockKind::Coupling).with_hidden(4)).unwrap();
        let r = lemma_b1_audit(&FlowMap::new(model).unwrap(), &g, 0.0, 500, 1).unwrap();
        assert_eq!(r.violations, 0);
        assert!((r.lhs - r.rhs).abs() < 1e-6 * r.rhs);
        assert!((r.constant - 1.0).abs() < 1e-6);
    }

    #[test]
    fn random_flow_satisfies_bound() {
        let g = GaussianModel::ar1(4, 0.8).unwrap();
        let mut model = FlowModel::new(FlowConfig::new(BankKind::Haar, &[4], 1, 2, BlockKind::Coupling).with_hidden(8)).unwrap();
        model.randomize(9, 0.5);
        let r = lemma_b1_audit(&FlowMap::new(model).unwrap(), &g, 0.3, 200, 2).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.report("audit").pass);
    }
}
