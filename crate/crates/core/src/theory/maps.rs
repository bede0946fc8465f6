//! Latent maps `x ↦ (y, z)` on 1-D signals, the reconstruction-error
//! estimator shared by the theory checks, and a Gaussian-data fitting loop.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::optim::{adamw_step, OptimState};
use crate::rng::NormalSampler;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::gaussian::{conditional_moments, monte_carlo, GaussianModel, MonteCarlo};

/// An invertible map from a length-`n` signal to a retained part `y` and a
/// discarded part `z`.
pub trait LatentMap: Sync {
    fn signal_len(&self) -> usize;
    fn latent_len(&self) -> usize;
    fn encode(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)>;
    /// Signal-space reconstruction `Wᵀ F⁻¹(y, z)`.
    fn decode(&self, y: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Single coupling with `ρ ≡ 1` and linear shift: `y = x_L`, `z = x_H − A x_L`.
#[derive(Clone, Debug)]
pub struct LinearCoupling {
    pub wl: DMatrix<f64>,
    pub wh: DMatrix<f64>,
    pub shift: DMatrix<f64>,
}

impl LinearCoupling {
    /// `η = 0`.
    pub fn identity(wl: DMatrix<f64>, wh: DMatrix<f64>) -> Self {
        let shift = DMatrix::zeros(wh.nrows(), wl.nrows());
        LinearCoupling { wl, wh, shift }
    }

    /// `η(x_L) = −E[x_H | x_L]`.
    pub fn optimal(g: &GaussianModel, wl: DMatrix<f64>, wh: DMatrix<f64>) -> Result<Self> {
        let shift = conditional_moments(g, &wl, &wh)?.mean_map;
        Ok(LinearCoupling { wl, wh, shift })
    }
}

impl LatentMap for LinearCoupling {
    fn signal_len(&self) -> usize {
        self.wl.ncols()
    }

    fn latent_len(&self) -> usize {
        self.wh.nrows()
    }

    fn encode(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let xl = &self.wl * x;
        let z = &self.wh * x - &self.shift * &xl;
        Ok((xl, z))
    }

    fn decode(&self, y: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        let xh = z + &self.shift * y;
        Ok(self.wl.transpose() * y + self.wh.transpose() * xh)
    }
}

/// A 1-D [`FlowModel`] viewed as a latent map; `z` concatenates every level.
#[derive(Clone, Debug)]
pub struct FlowMap {
    pub model: FlowModel,
}

impl FlowMap {
    pub fn new(model: FlowModel) -> Result<Self> {
        if model.dims() != 1 {
            return Err(Error::invalid("latent maps need a 1-D flow"));
        }
        Ok(FlowMap { model })
    }
}

impl LatentMap for FlowMap {
    fn signal_len(&self) -> usize {
        self.model.config.input_shape[0]
    }

    fn latent_len(&self) -> usize {
        self.model.z_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    fn encode(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let (y, zs) = self.model.forward(&Tensor::from_vec(x.as_slice().to_vec()))?;
        let z: Vec<f64> = zs.iter().flat_map(|t| t.data().iter().copied()).collect();
        Ok((DVector::from_vec(y.into_vec()), DVector::from_vec(z)))
    }

    fn decode(&self, y: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        let yt = Tensor::new(self.model.y_shape().to_vec(), y.as_slice().to_vec())?;
        let mut zs = Vec::new();
        let mut off = 0;
        for shape in self.model.z_shapes() {
            let len: usize = shape.iter().product();
            let part = z.as_slice().get(off..off + len).ok_or_else(|| Error::invalid("latent vector too short"))?;
            zs.push(Tensor::new(shape, part.to_vec())?);
            off += len;
        }
        Ok(DVector::from_vec(self.model.inverse(&yt, &zs)?.into_vec()))
    }
}

/// `E‖x − Wᵀ F⁻¹([F(Wx)]_y, z)‖²` with `z ~ N(0, σ²I)` (`z = 0` when `σ = 0`).
pub fn reconstruction_error(
    map: &dyn LatentMap,
    g: &GaussianModel,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<MonteCarlo> {
    if g.dim() != map.signal_len() {
        return Err(Error::invalid(format!(
            "map acts on length {}, model has dimension {}",
            map.signal_len(),
            g.dim()
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("prior temperature {sigma} must be non-negative")));
    }
    let nz = map.latent_len();
    monte_carlo(samples, seed, |rng| {
        let x = g.sample(rng);
        let (y, _) = map.encode(&x)?;
        let z = if sigma > 0.0 {
            DVector::from_vec(rng.fill(nz)) * sigma
        } else {
            DVector::zeros(nz)
        };
        Ok((x - map.decode(&y, &z)?).norm_squared())
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Keep every `Inv1x1` at its current value, so that `y` stays a function
    /// of the frame's low band alone.
    pub freeze_mixing: bool,
}

fn is_mixing(name: &str) -> bool {
    name.contains(".inv1x1.")
}

/// Resets every `Inv1x1` to the identity.
pub fn reset_mixing(model: &mut FlowModel) {
    let ids: Vec<usize> = (0..model.params().len()).filter(|&i| is_mixing(&model.params().names()[i])).collect();
    for i in ids {
        for v in model.params_mut().values_mut()[i].data_mut() {
            *v = 0.0;
        }
    }
}

/// Fits `model` to Gaussian data by minimizing the batch mean of
/// `‖x − F⁻¹([F(x)]_y, 0)‖²`. Returns the per-step loss.
pub fn fit_flow(model: &mut FlowModel, g: &GaussianModel, cfg: &FitConfig) -> Result<Vec<f64>> {
    if model.dims() != 1 || model.config.input_shape[0] != g.dim() {
        return Err(Error::invalid("fit needs a 1-D flow matching the Gaussian dimension"));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("batch and learning rate must be positive"));
    }
    let mut rng = NormalSampler::new(cfg.seed, 0);
    let mut state = OptimState::new(model.params().values(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let xs: Vec<Tensor> = (0..cfg.batch)
            .map(|_| Tensor::from_vec(g.sample(&mut rng).as_slice().to_vec()))
            .collect();
        let frozen: &FlowModel = model;
        let results = xs
            .par_iter()
            .map(|x| sample_fit_loss(frozen, x))
            .collect::<Vec<Result<(f64, Vec<Tensor>)>>>();
        let mut total = 0.0;
        let mut grads: Option<Vec<Tensor>> = None;
        for r in results {
            let (l, gs) = r?;
            total += l;
            match grads.as_mut() {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&gs) {
                        *a = a.add(b)?;
                    }
                }
                None => grads = Some(gs),
            }
        }
        let scale = 1.0 / cfg.batch as f64;
        let grads: Vec<Tensor> = grads
            .unwrap_or_default()
            .iter()
            .zip(model.params().names())
            .map(|(t, name)| if cfg.freeze_mixing && is_mixing(name) { t.scale(0.0) } else { t.scale(scale) })
            .collect();
        if !total.is_finite() || !grads.iter().all(Tensor::all_finite) {
            return Err(Error::Diverged {
                step: model.step,
                detail: "non-finite fit loss or gradient".into(),
            });
        }
        trace.push(total * scale);
        adamw_step(model.params_mut().values_mut(), &grads, &mut state)?;
        model.spectral_normalize();
        model.step += 1;
    }
    Ok(trace)
}

fn sample_fit_loss(model: &FlowModel, x: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let xv = tape.constant(x.clone());
    let (y, zs) = model.forward_graph(&tape, &p, xv)?;
    let zero: Vec<_> = zs.iter().map(|&z| tape.constant(Tensor::zeros(&tape.shape(z)))).collect();
    let mut certs = Vec::new();
    let xh = model.inverse_graph(&tape, &p, y, &zero, &mut certs)?;
    let diff = tape.sub(xv, xh)?;
    let loss = tape.sum_squares(diff)?;
    let g = tape.backward(loss)?;
    Ok((tape.item(loss), p.iter().map(|&v| g.get(v)).collect()))
}
