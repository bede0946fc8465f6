//! Closed-form reconstruction errors and bounds for a fixed frame split, with
//! their Monte Carlo counterparts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::framelet::FilterBank;

use super::gaussian::{
    conditional_moments, eigh_desc, monte_carlo, signal_mean_map, to_matrix, GaussianModel, MonteCarlo,
};
use super::maps::{reconstruction_error, LinearCoupling};

/// `(W_L, W_H)` of a bank on length-`n` signals.
pub fn frame_split(bank: &FilterBank, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    Ok((to_matrix(&bank.low_matrix(n)?)?, to_matrix(&bank.high_matrix(n)?)?))
}

fn check_dim(g: &GaussianModel, n: usize) -> Result<()> {
    if g.dim() != n {
        return Err(Error::invalid(format!("covariance is {0}x{0}, signal length is {n}", g.dim())));
    }
    Ok(())
}

/// `Tr(Var[x_H | x_L] · W_H W_Hᵀ)` for explicit analysis rows.
pub fn prop1_error_w(g: &GaussianModel, wl: &DMatrix<f64>, wh: &DMatrix<f64>) -> Result<f64> {
    let cm = conditional_moments(g, wl, wh)?;
    Ok((&cm.cov * wh * wh.transpose()).trace())
}

/// Minimal single-coupling reconstruction error for a Gaussian model.
pub fn prop1_error(g: &GaussianModel, bank: &FilterBank, n: usize) -> Result<f64> {
    check_dim(g, n)?;
    let (wl, wh) = frame_split(bank, n)?;
    prop1_error_w(g, &wl, &wh)
}

/// Shift used by the coupling in [`prop1_empirical`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaChoice {
    /// `η = −E[x_H | x_L]`.
    Optimal,
    /// `η = 0`.
    Zero,
}

/// Monte Carlo reconstruction error of the coupling with `ρ ≡ 1` and the
/// chosen `η`, latents set to zero.
pub fn prop1_empirical(
    g: &GaussianModel,
    bank: &FilterBank,
    n: usize,
    eta: EtaChoice,
    samples: usize,
    seed: u64,
) -> Result<MonteCarlo> {
    check_dim(g, n)?;
    let (wl, wh) = frame_split(bank, n)?;
    let map = match eta {
        EtaChoice::Optimal => LinearCoupling::optimal(g, wl, wh)?,
        EtaChoice::Zero => LinearCoupling::identity(wl, wh),
    };
    reconstruction_error(&map, g, 0.0, samples, seed)
}

fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::invalid(format!("pseudo-inverse failed: {e}")))
}

/// `J(W) = Tr((W_HᵀW_H)² P Σ P)` with `P = I − W_L†W_L`.
pub fn prop2_bound_w(g: &GaussianModel, wl: &DMatrix<f64>, wh: &DMatrix<f64>) -> Result<f64> {
    let n = g.dim();
    let p = DMatrix::identity(n, n) - pinv(wl)? * wl;
    let h = wh.transpose() * wh;
    Ok((&h * &h * &p * &g.cov * &p).trace())
}

pub fn prop2_bound(g: &GaussianModel, bank: &FilterBank, n: usize) -> Result<f64> {
    check_dim(g, n)?;
    let (wl, wh) = frame_split(bank, n)?;
    prop2_bound_w(g, &wl, &wh)
}

/// Monte Carlo error of the explicit extended-class map
/// `x̂ = W_Lᵀx_L + W_HᵀW_H(W_L†x_L + P μ(x_L))`, `μ(x_L) = E[x | W_L x = x_L]`,
/// whose error is `W_HᵀW_H P (x − μ)`.
pub fn prop2_construction_empirical(
    g: &GaussianModel,
    wl: &DMatrix<f64>,
    wh: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<MonteCarlo> {
    let n = g.dim();
    let wl_pinv = pinv(wl)?;
    let p = DMatrix::identity(n, n) - &wl_pinv * wl;
    let k = signal_mean_map(g, wl)?;
    let h = wh.transpose() * wh;
    let recon = wl.transpose() + &h * (&wl_pinv + &p * &k);
    monte_carlo(samples, seed, |rng| {
        let x = g.sample(rng);
        let xl = wl * &x;
        Ok((&x - &recon * xl).norm_squared())
    })
}

/// Ascending eigenvalues of `W_HᵀW_H` for an orthonormal square `W` with `d` low rows.
pub fn projector_spectrum(n: usize, d: usize) -> Vec<f64> {
    (0..n).map(|i| if i < d { 0.0 } else { 1.0 }).collect()
}

#[derive(Clone, Debug)]
pub struct RemarkBound {
    /// `Σ_{i=1}^{n−d} (λ↑ᵢ(W_HᵀW_H))² λ↓_{i+d}(Σ)` evaluated as written.
    pub formula: f64,
    /// Orthogonal `W` whose first `d` rows span the top-`d` eigenvectors of `Σ`.
    pub w: DMatrix<f64>,
    /// `J` of that `W`.
    pub constructed: f64,
    /// Minimum of `J` over orthonormal square `W`: the discarded eigenvalue tail.
    pub infimum: f64,
}

impl RemarkBound {
    /// `‖WᵀW − I‖_max`.
    pub fn feasibility(&self) -> f64 {
        let n = self.w.nrows();
        (self.w.transpose() * &self.w - DMatrix::identity(n, n)).amax()
    }
}

/// Evaluates the alignment formula and builds the principal-subspace `W`.
pub fn remark_bound(cov: &DMatrix<f64>, hh_spectrum: &[f64], d: usize) -> Result<RemarkBound> {
    let g = GaussianModel::new(cov.clone())?;
    let n = g.dim();
    if hh_spectrum.len() != n || d == 0 || d >= n {
        return Err(Error::invalid(format!(
            "need {n} spectrum values and 0 < d < {n}, got {} and d = {d}",
            hh_spectrum.len()
        )));
    }
    let (lam, vecs) = eigh_desc(cov);
    let mut up = hh_spectrum.to_vec();
    up.sort_by(f64::total_cmp);
    let formula = (0..n - d).map(|i| up[i] * up[i] * lam[i + d]).sum();
    let w = vecs.transpose();
    let wl = w.rows(0, d).into_owned();
    let wh = w.rows(d, n - d).into_owned();
    let constructed = prop2_bound_w(&g, &wl, &wh)?;
    Ok(RemarkBound {
        formula,
        w,
        constructed,
        infimum: lam[d..].iter().sum(),
    })
}

/// Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut crate::rng::NormalSampler) -> DMatrix<f64> {
    let a = DMatrix::from_vec(n, n, rng.fill(n * n));
    let qr = a.qr();
    let (q, r) = (qr.q(), qr.r());
    let signs = DVector::from_iterator(n, (0..n).map(|i| if r[(i, i)] < 0.0 { -1.0 } else { 1.0 }));
    q * DMatrix::from_diagonal(&signs)
}

/// `√d · ‖Var[x_H | x_L]‖_F / (1 − L)²`, the iResBlock bound at `f = 0`.
pub fn prop3_bound_w(g: &GaussianModel, wl: &DMatrix<f64>, wh: &DMatrix<f64>, lipschitz: f64) -> Result<f64> {
    if !(lipschitz > 0.0 && lipschitz < 1.0) {
        return Err(Error::invalid(format!("Lipschitz constant {lipschitz} outside (0, 1)")));
    }
    let cm = conditional_moments(g, wl, wh)?;
    let d = wl.nrows() as f64;
    Ok(d.sqrt() * cm.cov.norm() / (1.0 - lipschitz).powi(2))
}

pub fn prop3_bound(g: &GaussianModel, bank: &FilterBank, n: usize, lipschitz: f64) -> Result<f64> {
    check_dim(g, n)?;
    let (wl, wh) = frame_split(bank, n)?;
    prop3_bound_w(g, &wl, &wh, lipschitz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framelet::{make_bank, BankKind};
    use crate::rng::NormalSampler;

    fn two_by_two() -> GaussianModel {
        GaussianModel::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap()
    }

    #[test]
    fn haar_instance_is_one() {
        let bank = make_bank(BankKind::Haar);
        assert!((prop1_error(&two_by_two(), &bank, 2).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn isotropic_discards_half() {
        let g = GaussianModel::isotropic(8, 1.0).unwrap();
        let bank = make_bank(BankKind::Haar);
        assert!((prop1_error(&g, &bank, 8).unwrap() - 4.0).abs() < 1e-12);
        assert!((prop2_bound(&g, &bank, 8).unwrap() - 4.0).abs() < 1e-12);
        // √4 · ‖I₄‖_F / 0.25
        assert!((prop3_bound(&g, &bank, 8, 0.5).unwrap() - 2.0 * 2.0 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_j_is_projected_trace() {
        let g = GaussianModel::ar1(4, 0.7).unwrap();
        let mut rng = NormalSampler::new(1, 0);
        let q = random_orthogonal(4, &mut rng);
        let (wl, wh) = (q.rows(0, 2).into_owned(), q.rows(2, 2).into_owned());
        let p = wh.transpose() * &wh;
        let direct = (&p * &g.cov * &p).trace();
        assert!((prop2_bound_w(&g, &wl, &wh).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn remark_isotropic_and_diag() {
        let r = remark_bound(&DMatrix::identity(3, 3), &projector_spectrum(3, 1), 1).unwrap();
        assert!((r.formula - 1.0).abs() < 1e-14);
        assert!((r.infimum - 2.0).abs() < 1e-14);
        assert!(r.feasibility() < 1e-10);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 3.0, 2.0, 1.0]));
        let r = remark_bound(&diag, &projector_spectrum(4, 1), 1).unwrap();
        // 0²·3 + 1²·2 + 1²·1
        assert!((r.formula - 3.0).abs() < 1e-14);
        assert!((r.infimum - 6.0).abs() < 1e-14);
        assert!((r.constructed - 6.0).abs() < 1e-12);
    }

    #[test]
    fn prop3_monotone_in_l() {
        let bank = make_bank(BankKind::Haar);
        let vals: Vec<f64> = (1..10).map(|i| prop3_bound(&two_by_two(), &bank, 2, i as f64 / 10.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
        assert!((vals[8] - 100.0).abs() < 1e-9);
    }
}
