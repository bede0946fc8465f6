//! Gaussian data models, split covariances and conditional moments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::NormalSampler;
use crate::tensor::Tensor;

/// Added to `Σ_LL` when it is not numerically invertible.
pub const REGULARIZATION: f64 = 1e-10;
/// Tolerance for the symmetry and PSD checks.
pub const PSD_TOL: f64 = 1e-12;

pub(crate) fn to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    match t.shape() {
        &[r, c] => Ok(DMatrix::from_row_slice(r, c, t.data())),
        s => Err(Error::invalid(format!("expected a matrix, got shape {s:?}"))),
    }
}

pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Tensor {
    Tensor::new(vec![m.nrows(), m.ncols()], m.transpose().as_slice().to_vec()).expect("matrix shape")
}

/// Eigenvalues in descending order with matching eigenvector columns.
pub(crate) fn eigh_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Zero-mean (unless set) Gaussian with covariance `Σ`.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// `A` with `A Aᵀ = Σ`, used for sampling.
    factor: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if n == 0 || cov.ncols() != n {
            return Err(Error::invalid("covariance must be a non-empty square matrix"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > PSD_TOL * cov.amax().max(1.0) {
            return Err(Error::invalid(format!("covariance is not symmetric (deviation {asym:e})")));
        }
        let (vals, vecs) = eigh_desc(&cov);
        if let Some(&low) = vals.last() {
            if low < -PSD_TOL * vals[0].abs().max(1.0) {
                return Err(Error::invalid(format!("covariance has negative eigenvalue {low:e}")));
            }
        }
        let roots = DMatrix::from_diagonal(&DVector::from_iterator(n, vals.iter().map(|v| v.max(0.0).sqrt())));
        Ok(GaussianModel {
            mean: vec![0.0; n],
            factor: vecs * roots,
            cov,
        })
    }

    pub fn from_tensor(cov: &Tensor) -> Result<Self> {
        Self::new(to_matrix(cov)?)
    }

    /// `Σᵢⱼ = ρ^{|i−j|}`.
    pub fn ar1(n: usize, rho: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(n, n, |i, j| rho.powi((i as i32 - j as i32).abs())))
    }

    /// `Σ = v·I`.
    pub fn isotropic(n: usize, v: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * v)
    }

    pub fn with_mean(mut self, mean: Vec<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::invalid("mean length differs from covariance size"));
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn sample(&self, rng: &mut NormalSampler) -> DVector<f64> {
        let n = self.dim();
        let e = DVector::from_vec(rng.fill(n));
        &self.factor * e + DVector::from_column_slice(&self.mean)
    }

    pub fn sample_tensor(&self, rng: &mut NormalSampler) -> Tensor {
        Tensor::from_vec(self.sample(rng).as_slice().to_vec())
    }

    /// Eigenvalues in descending order.
    pub fn spectrum(&self) -> Vec<f64> {
        eigh_desc(&self.cov).0
    }
}

/// Blocks of `W Σ Wᵀ` for the split `W = [W_L; W_H]`.
#[derive(Clone, Debug)]
pub struct SplitCov {
    pub ll: DMatrix<f64>,
    pub lh: DMatrix<f64>,
    pub hh: DMatrix<f64>,
}

impl SplitCov {
    pub fn new(g: &GaussianModel, wl: &DMatrix<f64>, wh: &DMatrix<f64>) -> Result<Self> {
        if wl.ncols() != g.dim() || wh.ncols() != g.dim() {
            return Err(Error::invalid("analysis rows do not match the covariance size"));
        }
        Ok(SplitCov {
            ll: wl * &g.cov * wl.transpose(),
            lh: wl * &g.cov * wh.transpose(),
            hh: wh * &g.cov * wh.transpose(),
        })
    }

    pub fn assembled(&self) -> DMatrix<f64> {
        let (d, h) = (self.ll.nrows(), self.hh.nrows());
        let mut m = DMatrix::zeros(d + h, d + h);
        m.view_mut((0, 0), (d, d)).copy_from(&self.ll);
        m.view_mut((0, d), (d, h)).copy_from(&self.lh);
        m.view_mut((d, 0), (h, d)).copy_from(&self.lh.transpose());
        m.view_mut((d, d), (h, h)).copy_from(&self.hh);
        m
    }
}

/// `E[x_H | x_L] = M x_L` and the constant conditional covariance.
#[derive(Clone, Debug)]
pub struct ConditionalMoments {
    /// `M = Σ_HL Σ_LL⁻¹`.
    pub mean_map: DMatrix<f64>,
    /// Schur complement `Σ_HH − Σ_HL Σ_LL⁻¹ Σ_LH`.
    pub cov: DMatrix<f64>,
    /// Whether `Σ_LL` needed the `REGULARIZATION` ridge.
    pub regularized: bool,
}

/// Inverse of `Σ_LL`, falling back to `Σ_LL + 1e-10·I` when singular or
/// badly conditioned. Errors only if `allow_ridge` is false and it is needed.
fn ll_inverse(ll: &DMatrix<f64>, allow_ridge: bool) -> Result<(DMatrix<f64>, bool)> {
    let (vals, _) = eigh_desc(ll);
    let top = vals.first().copied().unwrap_or(0.0);
    let low = vals.last().copied().unwrap_or(0.0);
    if low > 1e-12 * top.max(1e-300) {
        if let Some(inv) = ll.clone().try_inverse() {
            return Ok((inv, false));
        }
    }
    if !allow_ridge {
        return Err(Error::Singular);
    }
    let ridged = ll + DMatrix::identity(ll.nrows(), ll.nrows()) * REGULARIZATION;
    ridged.try_inverse().map(|m| (m, true)).ok_or(Error::Singular)
}

/// Conditional moments of `x_H = W_H x` given `x_L = W_L x` (zero mean).
pub fn conditional_moments(g: &GaussianModel, wl: &DMatrix<f64>, wh: &DMatrix<f64>) -> Result<ConditionalMoments> {
    conditional_moments_with(g, wl, wh, true)
}

/// As [`conditional_moments`]; with `allow_ridge = false` a singular `Σ_LL` is an error.
pub fn conditional_moments_with(
    g: &GaussianModel,
    wl: &DMatrix<f64>,
    wh: &DMatrix<f64>,
    allow_ridge: bool,
) -> Result<ConditionalMoments> {
    let s = SplitCov::new(g, wl, wh)?;
    let (inv, regularized) = ll_inverse(&s.ll, allow_ridge)?;
    let hl = s.lh.transpose();
    let mean_map = &hl * &inv;
    let cov = &s.hh - &mean_map * &s.lh;
    Ok(ConditionalMoments {
        mean_map,
        cov: (&cov + cov.transpose()) * 0.5,
        regularized,
    })
}

/// `E[x | W_L x = x_L] = K x_L` in signal space, `K = Σ W_Lᵀ Σ_LL⁻¹`.
pub fn signal_mean_map(g: &GaussianModel, wl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ll = wl * &g.cov * wl.transpose();
    let (inv, _) = ll_inverse(&ll, true)?;
    Ok(&g.cov * wl.transpose() * inv)
}

/// Mean and standard error of a Monte Carlo average.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarlo {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Number of fixed RNG streams a Monte Carlo run is split across.
pub const MC_CHUNKS: usize = 64;

/// Averages `f(draw)` over `samples` draws. Chunk `k` draws from stream `k`
/// of `seed`; partial sums are combined in chunk order.
pub fn monte_carlo<F>(samples: usize, seed: u64, f: F) -> Result<MonteCarlo>
where
    F: Fn(&mut NormalSampler) -> Result<f64> + Sync,
{
    if samples < 2 {
        return Err(Error::invalid("Monte Carlo needs at least two samples"));
    }
    let chunks = MC_CHUNKS.min(samples);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let count = samples / chunks + usize::from(k < samples % chunks);
            let mut rng = NormalSampler::new(seed, k as u64);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let v = f(&mut rng)?;
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (s, s2) = partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = samples as f64;
    let mean = s / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(MonteCarlo {
        mean,
        std_err: (var / n).sqrt(),
        samples,
    })
}

/// Binned estimate of `E Var[x_H | x_L]` and of the regression slope of
/// `E[x_H | x_L]` for a scalar `x_L` and scalar `x_H`. Samples are sorted by
/// `x_L` and cut into consecutive bins of `per_bin` samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinnedConditional {
    pub mean_variance: f64,
    pub slope: f64,
    pub bins: usize,
}

pub fn binned_conditional(
    g: &GaussianModel,
    wl: &DMatrix<f64>,
    wh: &DMatrix<f64>,
    samples: usize,
    per_bin: usize,
    seed: u64,
) -> Result<BinnedConditional> {
    if wl.nrows() != 1 || wh.nrows() != 1 {
        return Err(Error::invalid("binned conditioning supports one low and one high coefficient"));
    }
    if per_bin < 2 || samples < 2 * per_bin {
        return Err(Error::invalid("need at least two bins of two samples"));
    }
    let chunks = MC_CHUNKS.min(samples);
    let mut pairs: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let count = samples / chunks + usize::from(k < samples % chunks);
            let mut rng = NormalSampler::new(seed, k as u64);
            (0..count)
                .map(|_| {
                    let x = g.sample(&mut rng);
                    ((wl * &x)[0], (wh * &x)[0])
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let bins = pairs.len() / per_bin;
    let (mut var_sum, mut sxy, mut sxx, mut mx, mut my) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let stats: Vec<(f64, f64)> = (0..bins)
        .map(|b| {
            let chunk = &pairs[b * per_bin..if b + 1 == bins { pairs.len() } else { (b + 1) * per_bin }];
            let m = chunk.len() as f64;
            let cx = chunk.iter().map(|p| p.0).sum::<f64>() / m;
            let cy = chunk.iter().map(|p| p.1).sum::<f64>() / m;
            let v = chunk.iter().map(|p| (p.1 - cy).powi(2)).sum::<f64>() / (m - 1.0);
            var_sum += v * m;
            (cx, cy)
        })
        .collect();
    for &(cx, cy) in &stats {
        mx += cx;
        my += cy;
    }
    mx /= bins as f64;
    my /= bins as f64;
    for &(cx, cy) in &stats {
        sxy += (cx - mx) * (cy - my);
        sxx += (cx - mx).powi(2);
    }
    Ok(BinnedConditional {
        mean_variance: var_sum / pairs.len() as f64,
        slope: sxy / sxx,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn haar() -> (DMatrix<f64>, DMatrix<f64>) {
        let s = 0.5f64.sqrt();
        (DMatrix::from_row_slice(1, 2, &[s, s]), DMatrix::from_row_slice(1, 2, &[s, -s]))
    }

    #[test]
    fn haar_schur_complement() {
        let g = GaussianModel::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let (wl, wh) = haar();
        let s = SplitCov::new(&g, &wl, &wh).unwrap();
        assert!((s.ll[0] - 3.0).abs() < 1e-14 && s.lh[0].abs() < 1e-14);
        let cm = conditional_moments(&g, &wl, &wh).unwrap();
        assert!((cm.cov[0] - 1.0).abs() < 1e-14 && cm.mean_map[0].abs() < 1e-14);
        assert!(!cm.regularized);
    }

    #[test]
    fn isotropic_is_independent() {
        let g = GaussianModel::isotropic(2, 1.0).unwrap();
        let (wl, wh) = haar();
        let cm = conditional_moments(&g, &wl, &wh).unwrap();
        assert!((cm.cov[0] - 1.0).abs() < 1e-14 && cm.mean_map[0].abs() < 1e-14);
    }

    #[test]
    fn singular_low_block() {
        let g = GaussianModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let wl = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let wh = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(matches!(conditional_moments_with(&g, &wl, &wh, false), Err(Error::Singular)));
        assert!(conditional_moments(&g, &wl, &wh).unwrap().regularized);
    }

    #[test]
    fn rejects_invalid_covariances() {
        assert!(GaussianModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(GaussianModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let g = GaussianModel::isotropic(3, 2.0).unwrap();
        let f = |r: &mut NormalSampler| Ok(g.sample(r).norm_squared());
        let a = monte_carlo(10_000, 7, f).unwrap();
        assert_eq!(a, monte_carlo(10_000, 7, f).unwrap());
        assert!((a.mean - 6.0).abs() < 4.0 * a.std_err);
    }
}
