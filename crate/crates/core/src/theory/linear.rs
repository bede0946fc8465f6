//! Orthogonal linear flows after an orthonormal frame: the closed-form optimum
//! and two independent routes to it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::optim::{adamw_step, LrSchedule, OptimState};
use crate::rng::NormalSampler;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::bounds::random_orthogonal;
use super::gaussian::{eigh_desc, from_matrix, GaussianModel};

fn check(cov: &DMatrix<f64>, d: usize, sigma: f64) -> Result<usize> {
    let n = cov.nrows();
    if cov.ncols() != n || d > n {
        return Err(Error::invalid(format!("need a square covariance and d ≤ n, got {n}x{} and d = {d}", cov.ncols())));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("prior temperature {sigma} must be non-negative")));
    }
    Ok(n)
}

/// Best error of any orthogonal `F`: `Σ_{i>d} λ↓ᵢ(Σ) + (n − d)σ²`.
pub fn theorem_linear_value(cov: &DMatrix<f64>, d: usize, sigma: f64) -> Result<f64> {
    let n = check(cov, d, sigma)?;
    GaussianModel::new(cov.clone())?;
    let (lam, _) = eigh_desc(cov);
    Ok(lam[d..].iter().sum::<f64>() + (n - d) as f64 * sigma * sigma)
}

/// `J(F) = Tr(F₂ W Σ Wᵀ F₂ᵀ) + (n − d)σ²`, `F₂` the last `n − d` rows of `F`.
pub fn linear_objective(cov: &DMatrix<f64>, w: &DMatrix<f64>, f: &DMatrix<f64>, d: usize, sigma: f64) -> Result<f64> {
    let n = check(cov, d, sigma)?;
    if w.shape() != (n, n) || f.shape() != (n, n) {
        return Err(Error::invalid("W and F must be square and match the covariance"));
    }
    let f2 = f.rows(d, n - d);
    let m = w * cov * w.transpose();
    Ok((f2 * m * f2.transpose()).trace() + (n - d) as f64 * sigma * sigma)
}

/// `F` whose retained rows are the top-`d` eigenvectors of `WΣWᵀ` and whose
/// discarded rows are the rest, with its objective.
pub fn constructive_optimum(
    cov: &DMatrix<f64>,
    w: &DMatrix<f64>,
    d: usize,
    sigma: f64,
) -> Result<(DMatrix<f64>, f64)> {
    check(cov, d, sigma)?;
    let m = w * cov * w.transpose();
    let (_, vecs) = eigh_desc(&m);
    let f = vecs.transpose();
    let j = linear_objective(cov, w, &f, d, sigma)?;
    Ok((f, j))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrthoSearch {
    pub best: f64,
    /// Final objective of every restart.
    pub restarts: Vec<f64>,
    pub steps: usize,
}

pub const RESTARTS: usize = 10;
pub const SEARCH_STEPS: usize = 1500;
const SEARCH_LR: f64 = 0.05;

/// Adam on `F = F₀ (I − A)(I + A)⁻¹`, `A = S − Sᵀ`, from `S = 0` and a random
/// orthogonal `F₀` per restart. Restart `k` draws `F₀` from stream `k`.
pub fn optimize_orthogonal(cov: &DMatrix<f64>, w: &DMatrix<f64>, d: usize, sigma: f64, seed: u64) -> Result<OrthoSearch> {
    let n = check(cov, d, sigma)?;
    if w.shape() != (n, n) {
        return Err(Error::invalid("W must be square and match the covariance"));
    }
    let m = from_matrix(&(w * cov * w.transpose()));
    let eye = from_matrix(&DMatrix::identity(n, n));
    let schedule = LrSchedule {
        base: SEARCH_LR,
        milestones: [0.5, 0.7, 0.85, 0.95].iter().map(|f| (f * SEARCH_STEPS as f64) as u64).collect(),
    };
    let offset = (n - d) as f64 * sigma * sigma;
    let mut restarts = Vec::with_capacity(RESTARTS);
    for k in 0..RESTARTS {
        let f0 = from_matrix(&random_orthogonal(n, &mut NormalSampler::new(seed, k as u64)));
        let mut params = vec![Tensor::zeros(&[n, n])];
        let mut state = OptimState::new(&params, SEARCH_LR);
        let objective = |s: &Tensor, grad: bool| -> Result<(f64, Option<Tensor>)> {
            let tape = Tape::new();
            let sv = if grad { tape.leaf(s.clone()) } else { tape.constant(s.clone()) };
            let i = tape.constant(eye.clone());
            let a = tape.sub(sv, tape.transpose(sv)?)?;
            let num = tape.sub(i, a)?;
            let den = tape.inv(tape.add(i, a)?)?;
            let f = tape.matmul(tape.constant(f0.clone()), tape.matmul(num, den)?)?;
            let f2 = tape.slice(f, 0, d..n)?;
            let proj = tape.matmul(f2, tape.constant(m.clone()))?;
            let j = tape.sum(tape.mul(proj, f2)?)?;
            let g = if grad { Some(tape.backward(j)?.get(sv)) } else { None };
            Ok((tape.item(j), g))
        };
        for step in 0..SEARCH_STEPS {
            let (_, g) = objective(&params[0], true)?;
            state.lr = schedule.at(step as u64);
            adamw_step(&mut params, &[g.expect("gradient requested")], &mut state)?;
        }
        restarts.push(objective(&params[0], false)?.0 + offset);
    }
    let best = restarts.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OrthoSearch {
        best,
        restarts,
        steps: SEARCH_STEPS,
    })
}

/// Random PSD matrix `G Gᵀ / n` with `G` an `n × n` Gaussian matrix.
pub fn random_psd(n: usize, rng: &mut NormalSampler) -> DMatrix<f64> {
    let g = DMatrix::from_vec(n, n, rng.fill(n * n));
    (&g * g.transpose()) / n as f64
}
