//! Downscaling to the retained representation and latent-sampling upscaling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::rng::NormalSampler;
use crate::tape::{Tape, Var};
use crate::tasks::metrics::psnr;
use crate::tensor::Tensor;

/// Output of the flow split into the retained `y` and per-level latents.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSplit {
    pub y: Tensor,
    pub zs: Vec<Tensor>,
}

impl LatentSplit {
    pub fn new(model: &FlowModel, x: &Tensor) -> Result<Self> {
        let (y, zs) = model.forward(x)?;
        Ok(LatentSplit { y, zs })
    }

    /// Reconstruction from the true latents.
    pub fn reconstruct(&self, model: &FlowModel) -> Result<Tensor> {
        model.inverse(&self.y, &self.zs)
    }
}

/// Isotropic Gaussian prior `N(0, σ²I)` over every latent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentPrior {
    pub sigma: f64,
}

impl LatentPrior {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("prior temperature must be finite and nonnegative, got {sigma}")));
        }
        Ok(LatentPrior { sigma })
    }

    /// One draw for each level, from its own stream of `seed`.
    pub fn sample(&self, model: &FlowModel, seed: u64, stream: u64) -> Vec<Tensor> {
        let shapes = model.z_shapes();
        if self.sigma == 0.0 {
            return shapes.iter().map(|s| Tensor::zeros(s)).collect();
        }
        let mut rng = NormalSampler::new(seed, stream);
        shapes
            .iter()
            .map(|s| Tensor::from_fn(s, |_| self.sigma * rng.sample()))
            .collect()
    }
}

impl Default for LatentPrior {
    fn default() -> Self {
        LatentPrior { sigma: 0.0 }
    }
}

/// `y` of the forward pass; the latents are discarded.
pub fn downscale(model: &FlowModel, x: &Tensor) -> Result<Tensor> {
    Ok(model.forward(x)?.0)
}

/// Mean of `inverse(y, z_k)` over `samples` prior draws. Draw `k` uses stream
/// `k` of `seed`, and the average is summed in draw order.
pub fn upscale(model: &FlowModel, y: &Tensor, prior: LatentPrior, samples: usize, seed: u64) -> Result<Tensor> {
    if samples == 0 {
        return Err(Error::invalid("upscale needs at least one sample"));
    }
    let draws = if prior.sigma == 0.0 { 1 } else { samples };
    let recon = (0..draws)
        .into_par_iter()
        .map(|k| model.inverse(y, &prior.sample(model, seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = recon[0].clone();
    for r in &recon[1..] {
        acc = acc.add(r)?;
    }
    Ok(acc.scale(1.0 / draws as f64))
}

/// Differentiable upscale with every latent fixed at zero.
pub fn upscale_var(tape: &Tape, p: &[Var], model: &FlowModel, y: Var) -> Result<Var> {
    let zs: Vec<Var> = model.z_shapes().iter().map(|s| tape.constant(Tensor::zeros(s))).collect();
    let mut certs = Vec::new();
    model.inverse_graph(tape, p, y, &zs, &mut certs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundtripReport {
    /// `‖x − x̂‖²/n`.
    pub mse: f64,
    /// Against peak 1.
    pub psnr: f64,
    /// `‖z^(ℓ)‖²/h_ℓ` per level.
    pub z_energy: Vec<f64>,
}

pub fn roundtrip_report(model: &FlowModel, x: &Tensor, prior: LatentPrior, samples: usize, seed: u64) -> Result<RoundtripReport> {
    let split = LatentSplit::new(model, x)?;
    let recon = upscale(model, &split.y, prior, samples, seed)?;
    let diff = x.sub(&recon)?;
    Ok(RoundtripReport {
        mse: diff.norm_sq() / x.len() as f64,
        psnr: psnr(x, &recon, 1.0)?,
        z_energy: split.zs.iter().map(|z| z.norm_sq() / z.len() as f64).collect(),
    })
}
