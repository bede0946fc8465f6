//! Command-line front end: argument parsing, run directories and manifests.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use lr2flow::config::RunConfig;
use lr2flow::flow::FlowModel;
use lr2flow::framelet::{make_bank, multi_level_analyze, multi_level_synthesize};
use lr2flow::io::{load_image, save_image, ImageBuffer};
use lr2flow::operators::{downscale, roundtrip_report, upscale, LatentPrior};
use lr2flow::rng::{NormalSampler, RNG_ALGORITHM};
use lr2flow::tasks::{
    bicubic_downscale, bicubic_upscale, denoise_forward, jpeg_simulate, psnr, ssim, train, DatasetKind, JpegSimConfig,
    RestorationHead, Task, ToyDataset,
};
use lr2flow::tasks::losses::add_gaussian_noise;
use lr2flow::theory::{reports_to_csv, summary, verify_theory_with, TheoryBudget};
use lr2flow::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "lr2flow", version, about = "Frame-plus-flow image rescaling, compression and denoising experiments")]
struct Cli {
    /// Run configuration of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Multi-level frame analysis of an image; writes every subband.
    Transform(InputArgs),
    /// Trains the configured task on toy patches.
    Train,
    /// Round-trip and bicubic-baseline metrics for every image in a directory.
    Eval(ModelArgs),
    /// Adds noise at `sigma_n` (unless `--noisy`) and restores with a trained head.
    Denoise {
        #[command(flatten)]
        model: ModelArgs,
        /// The input is already noisy: skip noise injection and metrics.
        #[arg(long)]
        noisy: bool,
    },
    /// Downscale, simulated JPEG on the low-resolution image, upscale.
    Compress {
        #[command(flatten)]
        model: ModelArgs,
        /// Quality factor; defaults to `val_qf`.
        #[arg(long)]
        qf: Option<u32>,
    },
    /// Runs the theory checks and writes `bound_reports.csv`.
    VerifyTheory {
        /// Smaller sample counts and iteration budgets.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Args, Debug)]
struct InputArgs {
    /// PGM (P5) or PPM (P6) image.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    input: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<lr2flow::Error> for Failure {
    fn from(e: lr2flow::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    command: &'static str,
    artifacts: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn seed(&self) -> Result<u64, Failure> {
        self.cfg.seed().map_err(|e| Failure::Usage(e.to_string()))
    }

    fn write_manifest(&self) -> anyhow::Result<()> {
        let text = self.cfg.to_text();
        let hash = Sha256::digest(text.as_bytes());
        let mut m = String::new();
        writeln!(m, "version = {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(m, "command = {}", self.command)?;
        match self.cfg.seed {
            Some(s) => writeln!(m, "seed = {s}")?,
            None => writeln!(m, "seed = none")?,
        }
        writeln!(m, "config_sha256 = {}", hex(&hash))?;
        writeln!(m, "rng = {RNG_ALGORITHM}")?;
        writeln!(m, "artifacts = {}", self.artifacts.join(","))?;
        fs::write(self.out.join("config.txt"), text).context("writing config.txt")?;
        fs::write(self.out.join("manifest.txt"), m).context("writing manifest.txt")?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Failure::Usage("no output directory; pass --out or set 'out_dir'".into()))?;
    let command = match &cli.command {
        Command::Transform(_) => "transform",
        Command::Train => "train",
        Command::Eval(_) => "eval",
        Command::Denoise { .. } => "denoise",
        Command::Compress { .. } => "compress",
        Command::VerifyTheory { .. } => "verify-theory",
    };
    let mut run = Run {
        cfg,
        out,
        command,
        artifacts: Vec::new(),
    };
    if !matches!(cli.command, Command::Transform(_)) {
        run.seed()?;
    }
    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    let outcome = match cli.command {
        Command::Transform(a) => transform(&mut run, &a.input),
        Command::Train => train_cmd(&mut run),
        Command::Eval(a) => eval(&mut run, &a),
        Command::Denoise { model, noisy } => denoise(&mut run, &model, noisy),
        Command::Compress { model, qf } => compress(&mut run, &model, qf),
        Command::VerifyTheory { quick } => verify(&mut run, quick),
    };
    run.write_manifest()?;
    outcome
}

fn transform(run: &mut Run, input: &Path) -> Result<(), Failure> {
    let x = load_image(input)?.to_tensor();
    let bank = make_bank(run.cfg.bank);
    let levels = multi_level_analyze(&x, &bank, 2, run.cfg.levels)?;
    for c in &levels {
        let name = format!("level_{}", c.level);
        c.save(&run.path(&name), &bank)?;
    }
    let recon = multi_level_synthesize(&levels, &bank, 2)?;
    save_image(run.path("reconstruction.pgm"), &ImageBuffer::from_tensor(&recon)?)?;
    println!("reconstruction max error {:.3e}", recon.max_abs_diff(&x)?);
    Ok(())
}

fn datasets(cfg: &RunConfig, seed: u64) -> anyhow::Result<(ToyDataset, ToyDataset)> {
    let p = cfg.patch;
    Ok(match cfg.dataset {
        DatasetKind::SyntheticBandlimited => (
            ToyDataset::synthetic(cfg.train_count, p, p, seed)?,
            ToyDataset::synthetic(cfg.val_count, p, p, seed.wrapping_add(1))?,
        ),
        DatasetKind::ImagePatches => {
            let path = cfg
                .data_path
                .as_ref()
                .ok_or_else(|| anyhow!("dataset 'image-patches' needs 'data_path'"))?;
            let img = load_image(path)?.to_tensor();
            (
                ToyDataset::image_patches(&img, cfg.train_count, p, p, seed)?,
                ToyDataset::image_patches(&img, cfg.val_count, p, p, seed.wrapping_add(1))?,
            )
        }
    })
}

fn train_cmd(run: &mut Run) -> Result<(), Failure> {
    let seed = run.seed()?;
    let flow_cfg = run.cfg.flow_config(&[run.cfg.patch, run.cfg.patch]);
    let mut tcfg = run.cfg.train_config().map_err(|e| Failure::Usage(e.to_string()))?;
    let flow_cfg = flow_cfg.map_err(|e| Failure::Usage(e.to_string()))?;
    let (data, val) = datasets(&run.cfg, seed)?;
    let mut model = FlowModel::new(flow_cfg)?;
    let mut head = match run.cfg.task {
        Task::Denoise => Some(RestorationHead::new(&model, run.cfg.head_hidden, seed)?),
        _ => None,
    };
    tcfg.checkpoint_dir = Some(run.path("checkpoint"));
    let log = train(run.cfg.task, &mut model, head.as_mut(), &data, Some(&val), &tcfg)?;
    log.write_csv(&run.path("train_log.csv"))?;
    let model_dir = run.path("model");
    model.save(&model_dir)?;
    if let Some(h) = &head {
        h.save(&model_dir.join("head"))?;
    }
    if let Some(last) = log.rows.last() {
        println!("step {} loss {:.6e}", last.step, last.loss);
    }
    Ok(())
}

fn image_files(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|s| s.to_str()), Some("pgm" | "ppm")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .pgm or .ppm images in {}", input.display());
    }
    Ok(files)
}

/// Non-overlapping `h × w` tiles in row-major tile order; the remainder is dropped.
fn tiles(x: &Tensor, h: usize, w: usize) -> anyhow::Result<(Vec<Tensor>, usize, usize)> {
    let (ih, iw) = (x.shape()[0], x.shape()[1]);
    let (th, tw) = (ih / h, iw / w);
    if th == 0 || tw == 0 {
        bail!("image {ih}x{iw} is smaller than the model input {h}x{w}");
    }
    let mut out = Vec::with_capacity(th * tw);
    for ti in 0..th {
        for tj in 0..tw {
            out.push(Tensor::from_fn(&[h, w], |k| x.data()[(ti * h + k / w) * iw + tj * w + k % w]));
        }
    }
    Ok((out, th, tw))
}

fn untile(parts: &[Tensor], th: usize, tw: usize) -> anyhow::Result<Tensor> {
    let (h, w) = (parts[0].shape()[0], parts[0].shape()[1]);
    let iw = tw * w;
    Ok(Tensor::from_fn(&[th * h, iw], |k| {
        let (r, c) = (k / iw, k % iw);
        parts[(r / h) * tw + c / w].data()[(r % h) * w + c % w]
    }))
}

fn load_model(dir: &Path) -> anyhow::Result<(FlowModel, usize, usize)> {
    let model = FlowModel::load(dir).with_context(|| format!("loading model from {}", dir.display()))?;
    let shape = &model.config.input_shape;
    if shape.len() != 2 {
        bail!("image commands need a 2-D model, found input shape {shape:?}");
    }
    let (h, w) = (shape[0], shape[1]);
    Ok((model, h, w))
}

fn eval(run: &mut Run, a: &ModelArgs) -> Result<(), Failure> {
    let seed = run.seed()?;
    let (model, h, w) = load_model(&a.model)?;
    let prior = LatentPrior::new(run.cfg.prior_sigma).map_err(|e| Failure::Usage(e.to_string()))?;
    let levels = model.config.levels;
    let mut csv = String::from("image,tiles,mse,psnr,ssim,psnr_bicubic,z_energy\n");
    for file in image_files(&a.input)? {
        let x = load_image(&file)?.to_tensor();
        let (parts, th, tw) = tiles(&x, h, w)?;
        let (mut mse, mut z) = (0.0, 0.0);
        let mut recon = Vec::with_capacity(parts.len());
        let mut bic = Vec::with_capacity(parts.len());
        for (k, t) in parts.iter().enumerate() {
            let r = roundtrip_report(&model, t, prior, run.cfg.samples, seed.wrapping_add(k as u64))?;
            mse += r.mse;
            z += r.z_energy.iter().sum::<f64>();
            let y = downscale(&model, t)?;
            recon.push(upscale(&model, &y, prior, run.cfg.samples, seed.wrapping_add(k as u64))?);
            bic.push(bicubic_upscale(&bicubic_downscale(t, levels)?, levels)?);
        }
        let n = parts.len() as f64;
        let (recon, bic) = (untile(&recon, th, tw)?, untile(&bic, th, tw)?);
        let crop = untile(&parts, th, tw)?;
        writeln!(
            csv,
            "{},{},{:e},{:.6},{:.6},{:.6},{:e}",
            file.file_name().map(|s| s.to_string_lossy()).unwrap_or_default(),
            parts.len(),
            mse / n,
            psnr(&crop, &recon, 1.0)?,
            ssim(&crop, &recon)?,
            psnr(&crop, &bic, 1.0)?,
            z / n
        )
        .map_err(anyhow::Error::from)?;
    }
    fs::write(run.path("eval.csv"), &csv).context("writing eval.csv")?;
    print!("{csv}");
    Ok(())
}

fn denoise(run: &mut Run, a: &ModelArgs, noisy: bool) -> Result<(), Failure> {
    let seed = run.seed()?;
    let (model, h, w) = load_model(&a.model)?;
    let head = RestorationHead::load(&a.model.join("head"), &model).context("loading restoration head")?;
    let mut rng = NormalSampler::new(seed, 20);
    let mut csv = String::from("image,psnr_noisy,psnr_denoised\n");
    for file in image_files(&a.input)? {
        let x = load_image(&file)?.to_tensor();
        let (parts, th, tw) = tiles(&x, h, w)?;
        let clean = untile(&parts, th, tw)?;
        let inputs: Vec<Tensor> = if noisy {
            parts
        } else {
            parts.iter().map(|t| add_gaussian_noise(t, run.cfg.sigma_n, &mut rng)).collect()
        };
        let restored = inputs
            .iter()
            .map(|t| denoise_forward(&model, &head, t))
            .collect::<lr2flow::Result<Vec<_>>>()?;
        let (noisy_img, restored) = (untile(&inputs, th, tw)?, untile(&restored, th, tw)?);
        let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        save_image(run.path(&format!("{stem}_denoised.pgm")), &ImageBuffer::from_tensor(&restored)?)?;
        if !noisy {
            save_image(run.path(&format!("{stem}_noisy.pgm")), &ImageBuffer::from_tensor(&noisy_img)?)?;
            writeln!(
                csv,
                "{stem},{:.6},{:.6}",
                psnr(&clean, &noisy_img, 1.0)?,
                psnr(&clean, &restored, 1.0)?
            )
            .map_err(anyhow::Error::from)?;
        }
    }
    if !noisy {
        fs::write(run.path("denoise.csv"), &csv).context("writing denoise.csv")?;
        print!("{csv}");
    }
    Ok(())
}

fn compress(run: &mut Run, a: &ModelArgs, qf: Option<u32>) -> Result<(), Failure> {
    let seed = run.seed()?;
    let (model, h, w) = load_model(&a.model)?;
    let jpeg = JpegSimConfig::new(qf.unwrap_or(run.cfg.val_qf), run.cfg.rounding).map_err(|e| Failure::Usage(e.to_string()))?;
    let prior = LatentPrior::new(run.cfg.prior_sigma).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut csv = String::from("image,qf,psnr,ssim\n");
    for file in image_files(&a.input)? {
        let x = load_image(&file)?.to_tensor();
        let (parts, th, tw) = tiles(&x, h, w)?;
        let mut lows = Vec::with_capacity(parts.len());
        let mut recon = Vec::with_capacity(parts.len());
        for (k, t) in parts.iter().enumerate() {
            let y = jpeg_simulate(&downscale(&model, t)?, jpeg)?;
            recon.push(upscale(&model, &y, prior, run.cfg.samples, seed.wrapping_add(k as u64))?);
            lows.push(y);
        }
        let clean = untile(&parts, th, tw)?;
        let (low, recon) = (untile(&lows, th, tw)?, untile(&recon, th, tw)?);
        let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        save_image(run.path(&format!("{stem}_lr.pgm")), &ImageBuffer::from_tensor(&low)?)?;
        save_image(run.path(&format!("{stem}_recon.pgm")), &ImageBuffer::from_tensor(&recon)?)?;
        writeln!(csv, "{stem},{},{:.6},{:.6}", jpeg.qf, psnr(&clean, &recon, 1.0)?, ssim(&clean, &recon)?)
            .map_err(anyhow::Error::from)?;
    }
    fs::write(run.path("compress.csv"), &csv).context("writing compress.csv")?;
    print!("{csv}");
    Ok(())
}

fn verify(run: &mut Run, quick: bool) -> Result<(), Failure> {
    let budget = if quick { TheoryBudget::quick() } else { TheoryBudget::full() };
    let reports = verify_theory_with(&budget, run.seed()?)?;
    fs::write(run.path("bound_reports.csv"), reports_to_csv(&reports)?).context("writing bound_reports.csv")?;
    let text = summary(&reports);
    fs::write(run.path("summary.txt"), &text).context("writing summary.txt")?;
    print!("{text}");
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("{failed} of {} theory checks failed", reports.len())));
    }
    Ok(())
}
