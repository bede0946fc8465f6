//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{BlockKind, FlowConfig};
use crate::framelet::BankKind;
use crate::tasks::{DatasetKind, DenoiseLossWeights, RescaleLossWeights, RoundingMode, Task, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub bank: BankKind,
    pub levels: usize,
    pub blocks: usize,
    pub block_kind: BlockKind,
    pub hidden: usize,
    pub lipschitz: f64,
    pub alpha: f64,
    pub lambda_hr: f64,
    pub lambda_lr: f64,
    pub lambda_dist: f64,
    pub lambda_img: f64,
    pub lambda_lf: f64,
    pub lambda_hf: f64,
    pub lr: f64,
    pub milestones: Vec<u64>,
    pub weight_decay: f64,
    pub steps: u64,
    pub batch: usize,
    /// Must come from the file or the command line; there is no default.
    pub seed: Option<u64>,
    pub dataset: DatasetKind,
    /// Source image for `image-patches`.
    pub data_path: Option<PathBuf>,
    /// Square patch side.
    pub patch: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub qf_set: Vec<u32>,
    pub val_qf: u32,
    pub rounding: RoundingMode,
    pub sigma_n: f64,
    pub actnorm_init: bool,
    pub val_every: u64,
    pub checkpoint_every: u64,
    pub head_hidden: usize,
    pub prior_sigma: f64,
    pub samples: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let rw = RescaleLossWeights::default();
        let dw = DenoiseLossWeights::default();
        RunConfig {
            task: Task::Rescale,
            bank: BankKind::LinearBspline,
            levels: 1,
            blocks: 4,
            block_kind: BlockKind::Coupling,
            hidden: 64,
            lipschitz: 0.9,
            alpha: 2.0,
            lambda_hr: rw.lambda_hr,
            lambda_lr: rw.lambda_lr,
            lambda_dist: rw.lambda_dist,
            lambda_img: dw.lambda_img,
            lambda_lf: dw.lambda_lf,
            lambda_hf: dw.lambda_hf,
            lr: t.lr,
            milestones: t.milestones,
            weight_decay: t.weight_decay,
            steps: t.steps,
            batch: t.batch_size,
            seed: None,
            dataset: DatasetKind::SyntheticBandlimited,
            data_path: None,
            patch: 16,
            train_count: 512,
            val_count: 64,
            qf_set: t.qf_set,
            val_qf: t.val_qf,
            rounding: t.rounding,
            sigma_n: t.noise_sigma,
            actnorm_init: t.actnorm_init,
            val_every: t.val_every,
            checkpoint_every: t.checkpoint_every,
            head_hidden: 64,
            prior_sigma: 0.0,
            samples: 1,
            out_dir: None,
        }
    }
}

fn list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(s: &str) -> Option<PathBuf> {
    (!s.is_empty()).then(|| PathBuf::from(s))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Every key, in canonical order.
    pub const KEYS: [&'static str; 36] = [
        "task",
        "bank",
        "levels",
        "blocks",
        "block_kind",
        "hidden",
        "lipschitz",
        "alpha",
        "lambda_hr",
        "lambda_lr",
        "lambda_dist",
        "lambda_img",
        "lambda_lf",
        "lambda_hf",
        "lr",
        "milestones",
        "weight_decay",
        "steps",
        "batch",
        "seed",
        "dataset",
        "data_path",
        "patch",
        "train_count",
        "val_count",
        "qf_set",
        "val_qf",
        "rounding",
        "sigma_n",
        "actnorm_init",
        "val_every",
        "checkpoint_every",
        "head_hidden",
        "prior_sigma",
        "samples",
        "out_dir",
    ];

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn p<T: FromStr>(v: &str) -> std::result::Result<T, String>
        where
            T::Err: Display,
        {
            v.parse::<T>().map_err(|e| e.to_string())
        }
        match key {
            "task" => self.task = p(value)?,
            "bank" => self.bank = p(value)?,
            "levels" => self.levels = p(value)?,
            "blocks" => self.blocks = p(value)?,
            "block_kind" => self.block_kind = p(value)?,
            "hidden" => self.hidden = p(value)?,
            "lipschitz" => self.lipschitz = p(value)?,
            "alpha" => self.alpha = p(value)?,
            "lambda_hr" => self.lambda_hr = p(value)?,
            "lambda_lr" => self.lambda_lr = p(value)?,
            "lambda_dist" => self.lambda_dist = p(value)?,
            "lambda_img" => self.lambda_img = p(value)?,
            "lambda_lf" => self.lambda_lf = p(value)?,
            "lambda_hf" => self.lambda_hf = p(value)?,
            "lr" => self.lr = p(value)?,
            "milestones" => self.milestones = list::<u64>(value).map_err(|e| e.to_string())?,
            "weight_decay" => self.weight_decay = p(value)?,
            "steps" => self.steps = p(value)?,
            "batch" => self.batch = p(value)?,
            "seed" => self.seed = Some(p(value)?),
            "dataset" => self.dataset = p(value)?,
            "data_path" => self.data_path = opt_path(value),
            "patch" => self.patch = p(value)?,
            "train_count" => self.train_count = p(value)?,
            "val_count" => self.val_count = p(value)?,
            "qf_set" => self.qf_set = list::<u32>(value).map_err(|e| e.to_string())?,
            "val_qf" => self.val_qf = p(value)?,
            "rounding" => self.rounding = p(value)?,
            "sigma_n" => self.sigma_n = p(value)?,
            "actnorm_init" => self.actnorm_init = p(value)?,
            "val_every" => self.val_every = p(value)?,
            "checkpoint_every" => self.checkpoint_every = p(value)?,
            "head_hidden" => self.head_hidden = p(value)?,
            "prior_sigma" => self.prior_sigma = p(value)?,
            "samples" => self.samples = p(value)?,
            "out_dir" => self.out_dir = opt_path(value),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    /// Unknown keys, repeated keys and unparsable values are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                detail: format!("expected 'key = value', found '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(Error::Config {
                    line,
                    detail: format!("duplicate key '{key}'"),
                });
            }
            cfg.set(key, value).map_err(|detail| Error::Config {
                line,
                detail: if detail.starts_with("unknown key") {
                    detail
                } else {
                    format!("bad value for '{key}': {detail}")
                },
            })?;
            seen.push(key);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text: every key in [`RunConfig::KEYS`] order. Parsing it
    /// gives back an equal config.
    pub fn to_text(&self) -> String {
        let vals: [String; 36] = [
            self.task.to_string(),
            self.bank.to_string(),
            self.levels.to_string(),
            self.blocks.to_string(),
            self.block_kind.to_string(),
            self.hidden.to_string(),
            format!("{:?}", self.lipschitz),
            format!("{:?}", self.alpha),
            format!("{:?}", self.lambda_hr),
            format!("{:?}", self.lambda_lr),
            format!("{:?}", self.lambda_dist),
            format!("{:?}", self.lambda_img),
            format!("{:?}", self.lambda_lf),
            format!("{:?}", self.lambda_hf),
            format!("{:?}", self.lr),
            join(&self.milestones),
            format!("{:?}", self.weight_decay),
            self.steps.to_string(),
            self.batch.to_string(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.dataset.to_string(),
            show_path(&self.data_path),
            self.patch.to_string(),
            self.train_count.to_string(),
            self.val_count.to_string(),
            join(&self.qf_set),
            self.val_qf.to_string(),
            self.rounding.to_string(),
            format!("{:?}", self.sigma_n),
            self.actnorm_init.to_string(),
            self.val_every.to_string(),
            self.checkpoint_every.to_string(),
            self.head_hidden.to_string(),
            format!("{:?}", self.prior_sigma),
            self.samples.to_string(),
            show_path(&self.out_dir),
        ];
        Self::KEYS
            .iter()
            .zip(vals)
            .filter(|(k, v)| !(v.is_empty() && **k == "seed"))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::invalid("no seed given; set 'seed' in the config or pass --seed"))
    }

    pub fn flow_config(&self, input_shape: &[usize]) -> Result<FlowConfig> {
        let mut f = FlowConfig::new(self.bank, input_shape, self.levels, self.blocks, self.block_kind)
            .with_hidden(self.hidden)
            .with_seed(self.seed()?);
        f.lipschitz = self.lipschitz;
        f.alpha = self.alpha;
        Ok(f)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            steps: self.steps,
            batch_size: self.batch,
            lr: self.lr,
            milestones: self.milestones.clone(),
            weight_decay: self.weight_decay,
            seed: self.seed()?,
            val_every: self.val_every,
            rescale_weights: RescaleLossWeights::new(self.lambda_hr, self.lambda_lr, self.lambda_dist)?,
            denoise_weights: DenoiseLossWeights::new(self.lambda_img, self.lambda_lf, self.lambda_hf)?,
            qf_set: self.qf_set.clone(),
            val_qf: self.val_qf,
            rounding: self.rounding,
            noise_sigma: self.sigma_n,
            actnorm_init: self.actnorm_init,
            checkpoint_dir: None,
            checkpoint_every: self.checkpoint_every,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.seed = Some(7);
        cfg.milestones = vec![10, 20];
        cfg.data_path = Some("imgs/a.pgm".into());
        cfg.lr = 1e-3;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_blanks() {
        let cfg = RunConfig::parse("# run\n\ntask = denoise  # trailing\nsteps=3\n").unwrap();
        assert_eq!(cfg.task, Task::Denoise);
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.seed, None);
        assert!(cfg.seed().is_err());
    }

    #[test]
    fn rejects_unknown_duplicate_and_bad_values() {
        let e = RunConfig::parse("steps = 1\nwidth = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("'width'"), "{e}");
        let e = RunConfig::parse("seed = 1\nseed = 2\n").unwrap_err().to_string();
        assert!(e.contains("duplicate key 'seed'"), "{e}");
        assert!(RunConfig::parse("bank = db4\n").is_err());
        assert!(RunConfig::parse("steps\n").is_err());
        assert!(RunConfig::parse("qf_set = 50,x\n").is_err());
    }
}
