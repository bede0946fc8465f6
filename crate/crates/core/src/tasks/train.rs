//! Minibatch AdamW training for the rescaling, compression and denoising tasks.
//!
//! Each batch element gets its own tape (evaluated in parallel); gradients
//! and loss components are summed in batch order so runs are bitwise
//! reproducible. All randomness comes from fixed streams of the run seed.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::operators::{upscale, LatentPrior};
use crate::optim::{adamw_step, LrSchedule, OptimState};
use crate::rng::NormalSampler;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::dataset::ToyDataset;
use super::jpeg::{jpeg_simulate, rounding_noise, JpegSimConfig, RoundingMode};
use super::losses::{
    add_gaussian_noise, denoise_forward, loss_compression_var, loss_denoising_var, loss_rescaling_var,
    DenoiseLossWeights, LossValues, RescaleLossWeights, RestorationHead,
};
use super::metrics::psnr;

const STREAM_BATCH: u64 = 10;
const STREAM_VALIDATION: u64 = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Rescale,
    Compress,
    Denoise,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Rescale => "rescale",
            Task::Compress => "compress",
            Task::Denoise => "denoise",
        }
    }

    /// CSV column names of the three loss components.
    pub fn component_names(self) -> [&'static str; 3] {
        match self {
            Task::Rescale | Task::Compress => ["l_hr", "l_lr", "l_dist"],
            Task::Denoise => ["l_img", "l_lf", "l_hf"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rescale" => Ok(Task::Rescale),
            "compress" => Ok(Task::Compress),
            "denoise" => Ok(Task::Denoise),
            _ => Err(Error::invalid(format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Steps at which the learning rate halves.
    pub milestones: Vec<u64>,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validation PSNR is logged every `val_every` steps and at the last step.
    pub val_every: u64,
    pub rescale_weights: RescaleLossWeights,
    pub denoise_weights: DenoiseLossWeights,
    /// Quality factors drawn uniformly, one per batch.
    pub qf_set: Vec<u32>,
    pub val_qf: u32,
    pub rounding: RoundingMode,
    /// Noise standard deviation for denoising, on the [0, 1] scale.
    pub noise_sigma: f64,
    /// Data-dependent ActNorm initialization before the first step of a fresh model.
    pub actnorm_init: bool,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            lr: 2e-4,
            milestones: Vec::new(),
            weight_decay: 0.0,
            seed: 0,
            val_every: 100,
            rescale_weights: RescaleLossWeights::default(),
            denoise_weights: DenoiseLossWeights::default(),
            qf_set: (50..=90).step_by(5).collect(),
            val_qf: 75,
            rounding: RoundingMode::AdditiveNoise,
            noise_sigma: 25.0 / 255.0,
            actnorm_init: true,
            checkpoint_dir: None,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    fn validate(&self, task: Task) -> Result<()> {
        if self.batch_size == 0 || self.val_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::invalid("batch size, validation and checkpoint intervals must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and weight decay nonnegative"));
        }
        if task == Task::Compress {
            if self.qf_set.is_empty() {
                return Err(Error::invalid("compression training needs at least one quality factor"));
            }
            for &qf in self.qf_set.iter().chain([&self.val_qf]) {
                JpegSimConfig::new(qf, self.rounding)?;
            }
        }
        if task == Task::Denoise && !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise level must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub parts: [f64; 3],
    pub psnr_val: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub task: Task,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn header(&self) -> String {
        let [a, b, c] = self.task.component_names();
        format!("step,loss,{a},{b},{c},psnr_val")
    }

    /// One line per step; `psnr_val` is empty on steps without validation.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header().split(','))?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                format!("{:e}", r.loss),
                format!("{:e}", r.parts[0]),
                format!("{:e}", r.parts[1]),
                format!("{:e}", r.parts[2]),
                r.psnr_val.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// What one batch element needs beyond its clean patch.
enum SampleInput {
    Plain,
    Jpeg(JpegSimConfig, Option<Tensor>),
    Noisy(Tensor),
}

struct SampleResult {
    values: LossValues,
    grads: Vec<Tensor>,
    head_grads: Vec<Tensor>,
}

fn sample_loss(
    task: Task,
    model: &FlowModel,
    head: Option<&RestorationHead>,
    x: &Tensor,
    input: &SampleInput,
    cfg: &TrainConfig,
) -> Result<SampleResult> {
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let hp = head.map(|h| h.params.bind(&tape)).unwrap_or_default();
    let terms = match (task, input) {
        (Task::Rescale, _) => loss_rescaling_var(&tape, &p, model, x, cfg.rescale_weights)?,
        (Task::Compress, SampleInput::Jpeg(jc, noise)) => {
            loss_compression_var(&tape, &p, model, x, cfg.rescale_weights, *jc, noise.as_ref())?
        }
        (Task::Denoise, SampleInput::Noisy(xn)) => {
            let head = head.ok_or_else(|| Error::invalid("denoising needs a restoration head"))?;
            loss_denoising_var(&tape, &p, &hp, model, head, x, xn, cfg.denoise_weights)?
        }
        _ => unreachable!("sample inputs are built per task"),
    };
    let values = terms.values(&tape);
    let g = tape.backward(terms.total)?;
    Ok(SampleResult {
        values,
        grads: p.iter().map(|&v| g.get(v)).collect(),
        head_grads: hp.iter().map(|&v| g.get(v)).collect(),
    })
}

fn accumulate(acc: &mut [Tensor], add: &[Tensor]) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(add) {
        *a = a.add(b)?;
    }
    Ok(())
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::NotConverged { .. })
}

/// Mean validation PSNR of the task's reconstruction on `val`.
pub fn validation_psnr(
    task: Task,
    model: &FlowModel,
    head: Option<&RestorationHead>,
    val: &ToyDataset,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut noise = NormalSampler::new(cfg.seed, STREAM_VALIDATION);
    let noisy: Vec<Tensor> = match task {
        Task::Denoise => val.patches.iter().map(|x| add_gaussian_noise(x, cfg.noise_sigma, &mut noise)).collect(),
        _ => Vec::new(),
    };
    let scores = val
        .patches
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let x_hat = match task {
                Task::Rescale => upscale(model, &model.forward(x)?.0, LatentPrior::default(), 1, 0)?,
                Task::Compress => {
                    let y = model.forward(x)?.0;
                    let y = jpeg_simulate(&y, JpegSimConfig::new(cfg.val_qf, cfg.rounding)?)?;
                    upscale(model, &y, LatentPrior::default(), 1, 0)?
                }
                Task::Denoise => {
                    let head = head.ok_or_else(|| Error::invalid("denoising needs a restoration head"))?;
                    denoise_forward(model, head, &noisy[i])?
                }
            };
            psnr(x, &x_hat, 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn save_checkpoint(dir: &Path, model: &FlowModel, head: Option<&RestorationHead>) -> Result<()> {
    model.save(dir)?;
    match head {
        Some(h) => h.save(&dir.join("head")),
        None => Ok(()),
    }
}

/// Trains `model` (and `head` for denoising) in place. The log has one row
/// per step, holding the batch-mean loss before that step's update. On a
/// non-finite loss, gradient or parameter the last good state is restored
/// (and checkpointed when a directory is configured) and
/// [`Error::Diverged`] is returned.
pub fn train(
    task: Task,
    model: &mut FlowModel,
    mut head: Option<&mut RestorationHead>,
    data: &ToyDataset,
    val: Option<&ToyDataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate(task)?;
    if task == Task::Denoise && head.is_none() {
        return Err(Error::invalid("denoising needs a restoration head"));
    }
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut log = TrainLog { task, rows: Vec::new() };
    if cfg.steps == 0 {
        return Ok(log);
    }
    if cfg.actnorm_init && model.step == 0 {
        let n = data.len().min(64);
        model.init_actnorm(&data.patches[..n])?;
    }

    let schedule = LrSchedule {
        base: cfg.lr,
        milestones: cfg.milestones.clone(),
    };
    let mut state = OptimState::new(model.params().values(), cfg.lr).with_weight_decay(cfg.weight_decay);
    let mut head_state = head
        .as_ref()
        .map(|h| OptimState::new(h.params.values(), cfg.lr).with_weight_decay(cfg.weight_decay));
    let mut rng = NormalSampler::new(cfg.seed, STREAM_BATCH);
    let denom = cfg.batch_size as f64;

    for step in 0..cfg.steps {
        let good_model = model.clone();
        let good_head = head.as_ref().map(|h| (**h).clone());

        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.index(data.len())).collect();
        let inputs: Vec<SampleInput> = match task {
            Task::Rescale => idx.iter().map(|_| SampleInput::Plain).collect(),
            Task::Compress => {
                let qf = cfg.qf_set[rng.index(cfg.qf_set.len())];
                let jc = JpegSimConfig::new(qf, cfg.rounding)?;
                let ys = model.y_shape();
                idx.iter()
                    .map(|_| {
                        let noise = match cfg.rounding {
                            RoundingMode::AdditiveNoise => Some(rounding_noise(ys[0], ys[1], &mut rng)),
                            RoundingMode::StraightThrough => None,
                        };
                        SampleInput::Jpeg(jc, noise)
                    })
                    .collect()
            }
            Task::Denoise => idx
                .iter()
                .map(|&i| SampleInput::Noisy(add_gaussian_noise(&data.patches[i], cfg.noise_sigma, &mut rng)))
                .collect(),
        };

        let psnr_val = match val {
            Some(v) if step % cfg.val_every == 0 || step + 1 == cfg.steps => {
                Some(validation_psnr(task, model, head.as_deref(), v, cfg)?)
            }
            _ => None,
        };

        let frozen: &FlowModel = model;
        let frozen_head = head.as_deref();
        let results: Vec<Result<SampleResult>> = idx
            .par_iter()
            .zip(inputs.par_iter())
            .map(|(&i, input)| sample_loss(task, frozen, frozen_head, &data.patches[i], input, cfg))
            .collect();

        let mut total = 0.0;
        let mut parts = [0.0; 3];
        let mut grads: Option<Vec<Tensor>> = None;
        let mut head_grads: Option<Vec<Tensor>> = None;
        let mut failure = None;
        for r in results {
            match r {
                Ok(s) => {
                    total += s.values.total;
                    for (a, b) in parts.iter_mut().zip(s.values.parts) {
                        *a += b;
                    }
                    match grads.as_mut() {
                        Some(g) => accumulate(g, &s.grads)?,
                        None => grads = Some(s.grads),
                    }
                    match head_grads.as_mut() {
                        Some(g) => accumulate(g, &s.head_grads)?,
                        None => head_grads = Some(s.head_grads),
                    }
                }
                Err(e) if is_divergence(&e) => {
                    failure = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let grads: Vec<Tensor> = grads.unwrap_or_default().iter().map(|g| g.scale(1.0 / denom)).collect();
        let head_grads: Vec<Tensor> = head_grads.unwrap_or_default().iter().map(|g| g.scale(1.0 / denom)).collect();
        if failure.is_none() && !(total.is_finite() && grads.iter().chain(&head_grads).all(Tensor::all_finite)) {
            failure = Some("non-finite loss or gradient".into());
        }

        if failure.is_none() {
            log.rows.push(LogRow {
                step,
                loss: total / denom,
                parts: parts.map(|v| v / denom),
                psnr_val,
            });
            let lr = schedule.at(step);
            state.lr = lr;
            adamw_step(model.params_mut().values_mut(), &grads, &mut state)?;
            if let (Some(h), Some(hs)) = (head.as_deref_mut(), head_state.as_mut()) {
                hs.lr = lr;
                adamw_step(h.params.values_mut(), &head_grads, hs)?;
            }
            model.spectral_normalize();
            model.step += 1;
            let finite = model.params().values().iter().all(Tensor::all_finite)
                && head.as_deref().is_none_or(|h| h.params.values().iter().all(Tensor::all_finite));
            if !finite {
                failure = Some("non-finite parameters after update".into());
            }
        }

        if let Some(detail) = failure {
            *model = good_model;
            if let (Some(h), Some(g)) = (head.as_deref_mut(), good_head) {
                *h = g;
            }
            if let Some(dir) = &cfg.checkpoint_dir {
                save_checkpoint(dir, model, head.as_deref())?;
            }
            return Err(Error::Diverged { step, detail });
        }

        if let Some(dir) = &cfg.checkpoint_dir {
            if (step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps {
                save_checkpoint(dir, model, head.as_deref())?;
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{BlockKind, FlowConfig};
    use crate::framelet::BankKind;

    fn small_model() -> FlowModel {
        FlowModel::new(FlowConfig::new(BankKind::Haar, &[8, 8], 1, 1, BlockKind::Coupling).with_hidden(8)).unwrap()
    }

    #[test]
    fn zero_steps_leave_model_untouched() {
        let mut m = small_model();
        let before = m.params().values().to_vec();
        let data = ToyDataset::synthetic(4, 8, 8, 0).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let log = train(Task::Rescale, &mut m, None, &data, None, &cfg).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(m.params().values(), before.as_slice());
    }

    #[test]
    fn header_follows_task() {
        let log = TrainLog {
            task: Task::Denoise,
            rows: Vec::new(),
        };
        assert_eq!(log.header(), "step,loss,l_img,l_lf,l_hf,psnr_val");
        assert_eq!(log.to_csv().unwrap(), "step,loss,l_img,l_lf,l_hf,psnr_val\n");
    }

    #[test]
    fn denoising_requires_head() {
        let mut m = small_model();
        let data = ToyDataset::synthetic(4, 8, 8, 0).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        assert!(train(Task::Denoise, &mut m, None, &data, None, &cfg).is_err());
    }

    #[test]
    fn divergence_restores_last_good_state() {
        let mut m = small_model();
        let data = ToyDataset::synthetic(4, 8, 8, 0).unwrap();
        let cfg = TrainConfig {
            steps: 50,
            batch_size: 2,
            lr: 1e6,
            actnorm_init: false,
            ..TrainConfig::default()
        };
        match train(Task::Rescale, &mut m, None, &data, None, &cfg) {
            Err(Error::Diverged { .. }) => assert!(m.params().values().iter().all(Tensor::all_finite)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
