//! Rescaling, compression and denoising objectives.
//!
//! Every `*_var` function records one sample's loss on a tape and returns the
//! weighted total along with the raw components; the plain versions evaluate
//! the same graph on constants.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{FlowModel, Mlp, ParamId, ParamSet};
use crate::operators::upscale_var;
use crate::rng::NormalSampler;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::bicubic::bicubic_downscale;
use super::jpeg::{jpeg_simulate_var, JpegSimConfig};

fn check_weights(w: [f64; 3]) -> Result<()> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid(format!("loss weights {w:?} must be nonnegative and not all zero")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RescaleLossWeights {
    pub lambda_hr: f64,
    pub lambda_lr: f64,
    pub lambda_dist: f64,
}

impl RescaleLossWeights {
    pub fn new(lambda_hr: f64, lambda_lr: f64, lambda_dist: f64) -> Result<Self> {
        check_weights([lambda_hr, lambda_lr, lambda_dist])?;
        Ok(RescaleLossWeights {
            lambda_hr,
            lambda_lr,
            lambda_dist,
        })
    }
}

impl Default for RescaleLossWeights {
    fn default() -> Self {
        RescaleLossWeights {
            lambda_hr: 1.0,
            lambda_lr: 5e-2,
            lambda_dist: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiseLossWeights {
    pub lambda_img: f64,
    pub lambda_lf: f64,
    pub lambda_hf: f64,
}

impl DenoiseLossWeights {
    pub fn new(lambda_img: f64, lambda_lf: f64, lambda_hf: f64) -> Result<Self> {
        check_weights([lambda_img, lambda_lf, lambda_hf])?;
        Ok(DenoiseLossWeights {
            lambda_img,
            lambda_lf,
            lambda_hf,
        })
    }
}

impl Default for DenoiseLossWeights {
    fn default() -> Self {
        DenoiseLossWeights {
            lambda_img: 1.0,
            lambda_lf: 1e-2,
            lambda_hf: 1e-2,
        }
    }
}

/// A recorded loss: weighted total plus the three raw components in logging order.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub parts: [Var; 3],
}

/// Evaluated [`LossTerms`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub parts: [f64; 3],
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            total: tape.item(self.total),
            parts: self.parts.map(|v| tape.item(v)),
        }
    }
}

fn weighted(tape: &Tape, parts: [Var; 3], w: [f64; 3]) -> Result<LossTerms> {
    let mut total = tape.scale(parts[0], w[0])?;
    for (&p, &wi) in parts[1..].iter().zip(&w[1..]) {
        let t = tape.scale(p, wi)?;
        total = tape.add(total, t)?;
    }
    Ok(LossTerms { total, parts })
}

fn l1(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.abs(d)?;
    tape.sum(d)
}

fn sq(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    tape.sum_squares(d)
}

fn latent_energy(tape: &Tape, zs: &[Var]) -> Result<Var> {
    let mut acc = tape.sum_squares(zs[0])?;
    for &z in &zs[1..] {
        let e = tape.sum_squares(z)?;
        acc = tape.add(acc, e)?;
    }
    Ok(acc)
}

/// Bicubic target for `y`: the halving bicubic applied once per level.
pub fn lr_target(model: &FlowModel, x: &Tensor) -> Result<Tensor> {
    bicubic_downscale(x, model.config.levels)
}

/// `λ_HR‖x̂ − x‖₁ + λ_LR‖y − Bic(x)‖² + λ_dist Σ_ℓ‖z^(ℓ)‖²`, with `x̂` the
/// zero-latent upscale of `y`.
pub fn loss_rescaling_var(tape: &Tape, p: &[Var], model: &FlowModel, x: &Tensor, w: RescaleLossWeights) -> Result<LossTerms> {
    rescale_like(tape, p, model, x, w, |y| Ok(y))
}

/// As [`loss_rescaling_var`] but `x̂` is upscaled from `jpeg_simulate(y)`.
/// `noise` freezes the additive-noise quantizer.
pub fn loss_compression_var(
    tape: &Tape,
    p: &[Var],
    model: &FlowModel,
    x: &Tensor,
    w: RescaleLossWeights,
    cfg: JpegSimConfig,
    noise: Option<&Tensor>,
) -> Result<LossTerms> {
    rescale_like(tape, p, model, x, w, |y| jpeg_simulate_var(tape, y, cfg, noise))
}

fn rescale_like(
    tape: &Tape,
    p: &[Var],
    model: &FlowModel,
    x: &Tensor,
    w: RescaleLossWeights,
    channel: impl Fn(Var) -> Result<Var>,
) -> Result<LossTerms> {
    let xv = tape.constant(x.clone());
    let (y, zs) = model.forward_graph(tape, p, xv)?;
    let received = channel(y)?;
    let x_hat = upscale_var(tape, p, model, received)?;
    let l_hr = l1(tape, x_hat, xv)?;
    let bic = tape.constant(lr_target(model, x)?);
    let l_lr = sq(tape, y, bic)?;
    let l_dist = latent_energy(tape, &zs)?;
    weighted(tape, [l_hr, l_lr, l_dist], [w.lambda_hr, w.lambda_lr, w.lambda_dist])
}

pub fn loss_rescaling(model: &FlowModel, x: &Tensor, w: RescaleLossWeights) -> Result<LossValues> {
    let tape = Tape::new();
    let p = model.params().bind_const(&tape);
    Ok(loss_rescaling_var(&tape, &p, model, x, w)?.values(&tape))
}

/// Evaluation-mode compression loss (true rounding).
pub fn loss_compression(model: &FlowModel, x: &Tensor, w: RescaleLossWeights, cfg: JpegSimConfig) -> Result<LossValues> {
    let tape = Tape::new();
    let p = model.params().bind_const(&tape);
    Ok(loss_compression_var(&tape, &p, model, x, w, cfg, None)?.values(&tape))
}

/// `ẑ = g ⊙ z_n + MLP([z_n; y_n])` over all levels' latents flattened in level
/// order. Starts as the identity on `z`.
#[derive(Clone, Debug)]
pub struct RestorationHead {
    pub params: ParamSet,
    pub mlp: Mlp,
    pub gate: ParamId,
    z_shapes: Vec<Vec<usize>>,
    y_len: usize,
}

impl RestorationHead {
    pub fn new(model: &FlowModel, hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        let z_shapes = model.z_shapes();
        let z_len: usize = z_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let y_len: usize = model.y_shape().iter().product();
        let mut params = ParamSet::new();
        let mut init = NormalSampler::new(seed, 3);
        let mlp = Mlp::new(&mut params, "head.mlp", &[z_len + y_len, hidden, hidden, z_len], true, &mut init);
        let gate = params.push("head.gate", Tensor::ones(&[z_len]));
        Ok(RestorationHead {
            params,
            mlp,
            gate,
            z_shapes,
            y_len,
        })
    }

    pub fn z_shapes(&self) -> &[Vec<usize>] {
        &self.z_shapes
    }

    pub fn forward_var(&self, tape: &Tape, hp: &[Var], y: Var, zs: &[Var]) -> Result<Vec<Var>> {
        if zs.len() != self.z_shapes.len() {
            return Err(Error::invalid(format!("head expects {} latent levels, got {}", self.z_shapes.len(), zs.len())));
        }
        let flat = zs
            .iter()
            .map(|&z| {
                let n: usize = tape.shape(z).iter().product();
                tape.reshape(z, &[n])
            })
            .collect::<Result<Vec<_>>>()?;
        let z = tape.concat(&flat, 0)?;
        let yf = tape.reshape(y, &[self.y_len])?;
        let input = tape.concat(&[z, yf], 0)?;
        let delta = self.mlp.forward(tape, hp, input)?;
        let gated = tape.mul(z, hp[self.gate.index()])?;
        let out = tape.add(gated, delta)?;
        let mut start = 0;
        self.z_shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let part = tape.slice(out, 0, start..start + n)?;
                start += n;
                tape.reshape(part, s)
            })
            .collect()
    }

    /// One LRTF file per parameter plus `head.txt` recording the hidden width.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.params.names().iter().zip(self.params.values()) {
            t.save(dir.join(format!("{name}.lrtf")))?;
        }
        let path = dir.join("head.txt");
        fs::write(&path, format!("hidden = {}\n", self.mlp.sizes[1])).map_err(|e| Error::io(&path, e))
    }

    /// Reads a head written by [`RestorationHead::save`] for `model`.
    pub fn load(dir: &Path, model: &FlowModel) -> Result<Self> {
        let path = dir.join("head.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let hidden = text
            .lines()
            .find_map(|l| l.strip_prefix("hidden = "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::format("head manifest", "missing 'hidden'"))?;
        let mut head = RestorationHead::new(model, hidden, 0)?;
        let values = head
            .params
            .names()
            .iter()
            .map(|name| Tensor::load(dir.join(format!("{name}.lrtf"))))
            .collect::<Result<Vec<_>>>()?;
        head.params.set_all(values)?;
        Ok(head)
    }

    /// Zeroes the head so that `ẑ = 0`.
    pub fn set_zero(&mut self) {
        for t in self.params.values_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
    }
}

/// `x̂ = inverse(y_n, R(z_n; y_n))` recorded on `tape`; also returns the
/// noisy split and `ẑ`.
pub fn denoise_forward_var(
    tape: &Tape,
    p: &[Var],
    hp: &[Var],
    model: &FlowModel,
    head: &RestorationHead,
    x_noisy: Var,
) -> Result<(Var, Var, Vec<Var>)> {
    let (y_n, z_n) = model.forward_graph(tape, p, x_noisy)?;
    let z_hat = head.forward_var(tape, hp, y_n, &z_n)?;
    let mut certs = Vec::new();
    let x_hat = model.inverse_graph(tape, p, y_n, &z_hat, &mut certs)?;
    Ok((x_hat, y_n, z_hat))
}

pub fn denoise_forward(model: &FlowModel, head: &RestorationHead, x_noisy: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let p = model.params().bind_const(&tape);
    let hp = head.params.bind_const(&tape);
    let xv = tape.constant(x_noisy.clone());
    let (x_hat, _, _) = denoise_forward_var(&tape, &p, &hp, model, head, xv)?;
    Ok(tape.value(x_hat))
}

/// `λ_img‖x̂ − x_c‖₁ + λ_lf‖y_n − y_c‖² + λ_hf Σ_ℓ‖z_c − ẑ‖²`.
pub fn loss_denoising_var(
    tape: &Tape,
    p: &[Var],
    hp: &[Var],
    model: &FlowModel,
    head: &RestorationHead,
    x_clean: &Tensor,
    x_noisy: &Tensor,
    w: DenoiseLossWeights,
) -> Result<LossTerms> {
    let xc = tape.constant(x_clean.clone());
    let xn = tape.constant(x_noisy.clone());
    let (y_c, z_c) = model.forward_graph(tape, p, xc)?;
    let (x_hat, y_n, z_hat) = denoise_forward_var(tape, p, hp, model, head, xn)?;
    let l_img = l1(tape, x_hat, xc)?;
    let l_lf = sq(tape, y_n, y_c)?;
    let diffs = z_c
        .iter()
        .zip(&z_hat)
        .map(|(&a, &b)| tape.sub(a, b))
        .collect::<Result<Vec<_>>>()?;
    let l_hf = latent_energy(tape, &diffs)?;
    weighted(tape, [l_img, l_lf, l_hf], [w.lambda_img, w.lambda_lf, w.lambda_hf])
}

pub fn loss_denoising(
    model: &FlowModel,
    head: &RestorationHead,
    x_clean: &Tensor,
    x_noisy: &Tensor,
    w: DenoiseLossWeights,
) -> Result<LossValues> {
    let tape = Tape::new();
    let p = model.params().bind_const(&tape);
    let hp = head.params.bind_const(&tape);
    Ok(loss_denoising_var(&tape, &p, &hp, model, head, x_clean, x_noisy, w)?.values(&tape))
}

/// `x + σ·N(0, 1)` per pixel, unclamped.
pub fn add_gaussian_noise(x: &Tensor, sigma: f64, rng: &mut NormalSampler) -> Tensor {
    let noise = rng.fill(x.len());
    Tensor::new(x.shape().to_vec(), x.data().iter().zip(noise).map(|(v, n)| v + sigma * n).collect())
        .expect("same length")
}
