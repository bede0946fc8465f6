use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::NormalSampler;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::mlp::Mlp;
use super::params::{ParamId, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Coupling,
    IRes,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Coupling => "coupling",
            BlockKind::IRes => "ires",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupling" => Ok(BlockKind::Coupling),
            "ires" => Ok(BlockKind::IRes),
            _ => Err(Error::invalid(format!("unknown block kind '{s}'"))),
        }
    }
}

/// Outcome of one fixed-point inversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionCertificate {
    pub iterations: usize,
    /// `‖x + φ(x) − y‖∞` at the returned point.
    pub residual: f64,
}

fn rows(tape: &Tape, c: Var) -> (usize, usize) {
    let s = tape.shape(c);
    (s[0], s[1])
}

/// Per-channel affine map `sᵢ·cᵢ + bᵢ` with `s = exp(log_scale)`.
#[derive(Clone, Debug)]
pub struct ActNorm {
    pub log_scale: ParamId,
    pub bias: ParamId,
}

impl ActNorm {
    pub fn new(params: &mut ParamSet, prefix: &str, channels: usize) -> Self {
        ActNorm {
            log_scale: params.push(format!("{prefix}.log_scale"), Tensor::zeros(&[channels])),
            bias: params.push(format!("{prefix}.bias"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, tape: &Tape, p: &[Var], c: Var) -> Result<Var> {
        let (_, cols) = rows(tape, c);
        let s = tape.exp(p[self.log_scale.0])?;
        let s = tape.tile_rows(s, cols)?;
        let b = tape.tile_rows(p[self.bias.0], cols)?;
        let sc = tape.mul(c, s)?;
        tape.add(sc, b)
    }

    pub fn inverse(&self, tape: &Tape, p: &[Var], c: Var) -> Result<Var> {
        let (_, cols) = rows(tape, c);
        let neg = tape.neg(p[self.log_scale.0])?;
        let inv_s = tape.exp(neg)?;
        let inv_s = tape.tile_rows(inv_s, cols)?;
        let b = tape.tile_rows(p[self.bias.0], cols)?;
        let centered = tape.sub(c, b)?;
        tape.mul(centered, inv_s)
    }

    /// Sets `s = 1/std`, `b = −mean/std` per channel over the stacked `[C, P]` samples.
    pub fn data_init(&self, params: &mut ParamSet, batch: &[Tensor]) {
        let channels = params.get(self.bias).len();
        let mut ls = vec![0.0; channels];
        let mut bias = vec![0.0; channels];
        for ch in 0..channels {
            let vals: Vec<f64> = batch
                .iter()
                .flat_map(|c| {
                    let p = c.shape()[1];
                    c.data()[ch * p..(ch + 1) * p].iter().copied()
                })
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            // Channels that are (nearly) constant on the batch keep unit scale.
            let std = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
            ls[ch] = -std.ln();
            bias[ch] = -mean / std;
        }
        *params.get_mut(self.log_scale) = Tensor::from_vec(ls);
        *params.get_mut(self.bias) = Tensor::from_vec(bias);
    }
}

/// Channel mixing by an orthogonal `K = (I − A)(I + A)⁻¹`, `A = R − Rᵀ`.
#[derive(Clone, Debug)]
pub struct Inv1x1 {
    pub raw: ParamId,
}

impl Inv1x1 {
    pub fn new(params: &mut ParamSet, prefix: &str, channels: usize) -> Self {
        Inv1x1 {
            raw: params.push(format!("{prefix}.raw"), Tensor::zeros(&[channels, channels])),
        }
    }

    pub fn k_var(&self, tape: &Tape, p: &[Var]) -> Result<Var> {
        let r = p[self.raw.0];
        let n = tape.shape(r)[0];
        let rt = tape.transpose(r)?;
        let a = tape.sub(r, rt)?;
        let eye = tape.constant(Tensor::eye(n));
        let i_minus = tape.sub(eye, a)?;
        let i_plus = tape.add(eye, a)?;
        let inv = tape.inv(i_plus)?;
        tape.matmul(i_minus, inv)
    }

    /// The derived orthogonal matrix as a plain tensor.
    pub fn k_matrix(&self, params: &ParamSet) -> Result<Tensor> {
        let tape = Tape::new();
        let p = params.bind_const(&tape);
        let k = self.k_var(&tape, &p)?;
        Ok(tape.value(k))
    }

    pub fn forward(&self, tape: &Tape, p: &[Var], c: Var) -> Result<Var> {
        let k = self.k_var(tape, p)?;
        tape.matmul(k, c)
    }

    pub fn inverse(&self, tape: &Tape, p: &[Var], c: Var) -> Result<Var> {
        let k = self.k_var(tape, p)?;
        let kt = tape.transpose(k)?;
        tape.matmul(kt, c)
    }
}

/// Affine coupling: the low row conditions a scale and shift of the high rows.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub rho: Mlp,
    pub eta: Mlp,
    pub alpha: f64,
}

impl Coupling {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        channels: usize,
        positions: usize,
        hidden: usize,
        alpha: f64,
        init: &mut NormalSampler,
    ) -> Self {
        let sizes = [positions, hidden, hidden, (channels - 1) * positions];
        Coupling {
            rho: Mlp::new(params, &format!("{prefix}.rho"), &sizes, true, init),
            eta: Mlp::new(params, &format!("{prefix}.eta"), &sizes, true, init),
            alpha,
        }
    }

    /// Returns `(low row, bounded log-scale, shift)`, the last two shaped `[C−1, P]`.
    fn conditioners(&self, tape: &Tape, p: &[Var], c: Var) -> Result<(Var, Var, Var)> {
        let (ch, cols) = rows(tape, c);
        let low = tape.slice(c, 0, 0..1)?;
        let low_vec = tape.reshape(low, &[cols])?;
        let r = self.rho.forward(tape, p, low_vec)?;
        let r = tape.tanh(r)?;
        let r = tape.scale(r, self.alpha)?;
        let r = tape.reshape(r, &[ch - 1, cols])?;
        let e = self.eta.forward(tape, p, low_vec)?;
        let e = tape.reshape(e, &[ch - 1, cols])?;
        Ok((low, r, e))
    }

    pub fn forward(&self, tape: &Tape, p: &[Var], c: Var) -> Result<Var> {
        let (ch, _) = rows(tape, c);
        let (low, r, e) = self.conditioners(tape, p, c)?;
        let high = tape.slice(c, 0, 1..ch)?;
        let s = tape.exp(r)?;
        let scaled = tape.mul(high, s)?;
        let out = tape.add(scaled, e)?;
        tape.concat(&[low, out], 0)
    }

    pub fn inverse(&self, tape: &Tape, p: &[Var], c: Var) -> Result<Var> {
        let (ch, _) = rows(tape, c);
        let (low, r, e) = self.conditioners(tape, p, c)?;
        let high = tape.slice(c, 0, 1..ch)?;
        let shifted = tape.sub(high, e)?;
        let nr = tape.neg(r)?;
        let s = tape.exp(nr)?;
        let out = tape.mul(shifted, s)?;
        tape.concat(&[low, out], 0)
    }
}

/// Residual block `c + φ(c)` with `Lip(φ) ≤ L` maintained by spectral normalization.
#[derive(Clone, Debug)]
pub struct IResBlock {
    pub phi: Mlp,
    pub lipschitz: f64,
    /// Persistent power-iteration vectors, one per layer (length = layer output size).
    pub power_u: Vec<Vec<f64>>,
}

pub const POWER_ITERATIONS: usize = 20;

impl IResBlock {
    pub fn new(params: &mut ParamSet, prefix: &str, dim: usize, hidden: usize, lipschitz: f64, init: &mut NormalSampler) -> Self {
        Self::with_sizes(params, prefix, &[dim, hidden, hidden, dim], lipschitz, init)
    }

    /// Arbitrary layer sizes; the first and last must match.
    pub fn with_sizes(params: &mut ParamSet, prefix: &str, sizes: &[usize], lipschitz: f64, init: &mut NormalSampler) -> Self {
        assert_eq!(sizes.first(), sizes.last(), "a residual map must preserve dimension");
        let phi = Mlp::new(params, &format!("{prefix}.phi"), sizes, true, init);
        let power_u = phi
            .sizes
            .windows(2)
            .map(|w| {
                let u = init.fill(w[1]);
                let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                u.into_iter().map(|v| v / n).collect()
            })
            .collect();
        IResBlock { phi, lipschitz, power_u }
    }

    fn phi_flat(&self, tape: &Tape, p: &[Var], v: Var) -> Result<Var> {
        self.phi.forward(tape, p, v)
    }

    pub fn forward(&self, tape: &Tape, p: &[Var], c: Var) -> Result<Var> {
        let shape = tape.shape(c);
        let v = tape.reshape(c, &[shape.iter().product()])?;
        let f = self.phi_flat(tape, p, v)?;
        let out = tape.add(v, f)?;
        tape.reshape(out, &shape)
    }

    /// Banach iteration `x ← y − φ(x)` from `x = y`, recorded on the tape so the
    /// result stays differentiable.
    pub fn inverse(&self, tape: &Tape, p: &[Var], y: Var, tol: f64, max_iter: usize) -> Result<(Var, InversionCertificate)> {
        let shape = tape.shape(y);
        let yv = tape.reshape(y, &[shape.iter().product()])?;
        let mut x = yv;
        let mut converged = None;
        for k in 1..=max_iter {
            let f = self.phi_flat(tape, p, x)?;
            let next = tape.sub(yv, f)?;
            let step = tape.value(next).max_abs_diff(&tape.value(x))?;
            x = next;
            if step < tol {
                converged = Some(k);
                break;
            }
        }
        let f = self.phi_flat(tape, p, x)?;
        let residual = {
            let (xv, fv, yv) = (tape.value(x), tape.value(f), tape.value(yv));
            xv.data()
                .iter()
                .zip(fv.data())
                .zip(yv.data())
                .fold(0.0f64, |m, ((a, b), c)| m.max((a + b - c).abs()))
        };
        let iterations = converged.ok_or(Error::NotConverged {
            iterations: max_iter,
            residual,
        })?;
        let out = tape.reshape(x, &shape)?;
        Ok((out, InversionCertificate { iterations, residual }))
    }

    /// Divides each layer's weight by `max(1, σ̂ / L^{1/layers})`, with σ̂ from
    /// power iteration continuing from the stored vectors.
    pub fn spectral_normalize(&mut self, params: &mut ParamSet) {
        let target = self.lipschitz.powf(1.0 / self.phi.layers.len() as f64);
        for (li, &(w, _)) in self.phi.layers.iter().enumerate() {
            let wt = params.get(w).clone();
            let sigma = power_iteration(&wt, &mut self.power_u[li], POWER_ITERATIONS);
            let factor = (sigma / target).max(1.0);
            if factor > 1.0 {
                *params.get_mut(w) = wt.scale(1.0 / factor);
            }
        }
    }

    /// Product of the current per-layer spectral-norm estimates (without updating the vectors).
    pub fn lipschitz_estimate(&self, params: &ParamSet) -> f64 {
        self.phi
            .layers
            .iter()
            .enumerate()
            .map(|(li, &(w, _))| {
                let mut u = self.power_u[li].clone();
                power_iteration(params.get(w), &mut u, POWER_ITERATIONS)
            })
            .product()
    }
}

/// Largest singular value estimate of `w` (`[m, n]`), refining `u` (length m) in place.
pub fn power_iteration(w: &Tensor, u: &mut [f64], iters: usize) -> f64 {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let d = w.data();
    let mut v = vec![0.0; n];
    let mut sigma = 0.0;
    for _ in 0..iters {
        v.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            for j in 0..n {
                v[j] += d[i * n + j] * u[i];
            }
        }
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        let mut wu = vec![0.0; m];
        for i in 0..m {
            wu[i] = (0..n).map(|j| d[i * n + j] * v[j]).sum();
        }
        let un = wu.iter().map(|x| x * x).sum::<f64>().sqrt();
        if un == 0.0 {
            return 0.0;
        }
        for (ui, wi) in u.iter_mut().zip(&wu) {
            *ui = wi / un;
        }
        sigma = un;
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_on_diagonal() {
        let w = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 0.5]).unwrap();
        let mut u = vec![0.6, 0.8];
        assert!((power_iteration(&w, &mut u, 20) - 2.0).abs() < 1e-10);
        assert_eq!(power_iteration(&Tensor::zeros(&[2, 2]), &mut u, 20), 0.0);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [BlockKind::Coupling, BlockKind::IRes] {
            assert_eq!(k.name().parse::<BlockKind>().unwrap(), k);
        }
        assert!("glow".parse::<BlockKind>().is_err());
    }
}
