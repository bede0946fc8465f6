use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::framelet::{analyze, analyze_var, make_bank, synthesize_var, BankKind, FilterBank};
use crate::rng::NormalSampler;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::blocks::{ActNorm, BlockKind, Coupling, IResBlock, InversionCertificate, Inv1x1};
use super::params::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub bank: BankKind,
    /// `[n]` for signals, `[h, w]` for images.
    pub input_shape: Vec<usize>,
    pub levels: usize,
    pub blocks: usize,
    pub kind: BlockKind,
    pub hidden: usize,
    pub lipschitz: f64,
    pub alpha: f64,
    pub seed: u64,
    pub inv_tol: f64,
    pub inv_max_iter: usize,
}

impl FlowConfig {
    pub fn new(bank: BankKind, input_shape: &[usize], levels: usize, blocks: usize, kind: BlockKind) -> Self {
        FlowConfig {
            bank,
            input_shape: input_shape.to_vec(),
            levels,
            blocks,
            kind,
            hidden: 64,
            lipschitz: 0.9,
            alpha: 2.0,
            seed: 0,
            inv_tol: 1e-10,
            inv_max_iter: 200,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    fn validate(&self) -> Result<()> {
        let dims = self.input_shape.len();
        if dims != 1 && dims != 2 {
            return Err(Error::invalid(format!("input must be 1-D or 2-D, got {:?}", self.input_shape)));
        }
        if self.levels == 0 {
            return Err(Error::invalid("levels must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz < 1.0) {
            return Err(Error::invalid(format!("Lipschitz budget {} outside (0,1)", self.lipschitz)));
        }
        if !(self.alpha > 0.0) || !(self.inv_tol > 0.0) || self.inv_max_iter == 0 {
            return Err(Error::invalid("alpha, inversion tolerance and iteration cap must be positive"));
        }
        let divisor = 1usize << self.levels;
        let taps = make_bank(self.bank).taps();
        for (axis, &len) in self.input_shape.iter().enumerate() {
            if len % divisor != 0 {
                return Err(Error::Indivisible { axis, len, divisor });
            }
            if len / (divisor / 2) < taps {
                return Err(Error::invalid(format!(
                    "axis {axis} of length {len} is too short for {} levels",
                    self.levels
                )));
            }
        }
        Ok(())
    }
}

/// Coefficient layout at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelGeometry {
    pub subband_shape: Vec<usize>,
    /// Subband count `C = (r+1)^dims`.
    pub channels: usize,
    /// Coefficients per subband `P`.
    pub positions: usize,
}

#[derive(Clone, Debug)]
pub enum Nonlinearity {
    Coupling(Coupling),
    IRes(IResBlock),
}

/// `g ∘ Inv1x1 ∘ ActNorm`.
#[derive(Clone, Debug)]
pub struct FlowBlock {
    pub actnorm: ActNorm,
    pub mix: Inv1x1,
    pub g: Nonlinearity,
}

impl FlowBlock {
    pub fn forward(&self, tape: &Tape, p: &[Var], c: Var) -> Result<Var> {
        let c = self.actnorm.forward(tape, p, c)?;
        let c = self.mix.forward(tape, p, c)?;
        match &self.g {
            Nonlinearity::Coupling(g) => g.forward(tape, p, c),
            Nonlinearity::IRes(g) => g.forward(tape, p, c),
        }
    }

    pub fn inverse(
        &self,
        tape: &Tape,
        p: &[Var],
        c: Var,
        tol: f64,
        max_iter: usize,
        certs: &mut Vec<InversionCertificate>,
    ) -> Result<Var> {
        let c = match &self.g {
            Nonlinearity::Coupling(g) => g.inverse(tape, p, c)?,
            Nonlinearity::IRes(g) => {
                let (x, cert) = g.inverse(tape, p, c, tol, max_iter)?;
                certs.push(cert);
                x
            }
        };
        let c = self.mix.inverse(tape, p, c)?;
        self.actnorm.inverse(tape, p, c)
    }
}

#[derive(Clone, Debug)]
pub struct FlowModel {
    pub config: FlowConfig,
    pub bank: FilterBank,
    params: ParamSet,
    pub levels: Vec<Vec<FlowBlock>>,
    geometry: Vec<LevelGeometry>,
    /// Optimizer steps applied so far.
    pub step: u64,
}

const MANIFEST: &str = "manifest.txt";
const FORMAT_TAG: &str = "lr2flow-checkpoint-1";

impl FlowModel {
    /// Builds a model whose every block is the identity map.
    pub fn new(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let bank = make_bank(config.bank);
        let dims = config.input_shape.len();
        let channels = bank.subbands(dims);
        let mut params = ParamSet::new();
        let mut init = NormalSampler::new(config.seed, 0);
        let mut levels = Vec::with_capacity(config.levels);
        let mut geometry = Vec::with_capacity(config.levels);
        let mut shape = config.input_shape.clone();
        for l in 0..config.levels {
            shape = shape.iter().map(|d| d / 2).collect();
            let positions: usize = shape.iter().product();
            geometry.push(LevelGeometry {
                subband_shape: shape.clone(),
                channels,
                positions,
            });
            let mut blocks = Vec::with_capacity(config.blocks);
            for b in 0..config.blocks {
                let prefix = format!("l{l}.b{b}");
                let actnorm = ActNorm::new(&mut params, &format!("{prefix}.actnorm"), channels);
                let mix = Inv1x1::new(&mut params, &format!("{prefix}.inv1x1"), channels);
                let g = match config.kind {
                    BlockKind::Coupling => Nonlinearity::Coupling(Coupling::new(
                        &mut params,
                        &format!("{prefix}.coupling"),
                        channels,
                        positions,
                        config.hidden,
                        config.alpha,
                        &mut init,
                    )),
                    BlockKind::IRes => Nonlinearity::IRes(IResBlock::new(
                        &mut params,
                        &format!("{prefix}.ires"),
                        channels * positions,
                        config.hidden,
                        config.lipschitz,
                        &mut init,
                    )),
                };
                blocks.push(FlowBlock { actnorm, mix, g });
            }
            levels.push(blocks);
        }
        Ok(FlowModel {
            config,
            bank,
            params,
            levels,
            geometry,
            step: 0,
        })
    }

    pub fn dims(&self) -> usize {
        self.config.input_shape.len()
    }

    pub fn geometry(&self) -> &[LevelGeometry] {
        &self.geometry
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Shape of `y`.
    pub fn y_shape(&self) -> &[usize] {
        &self.geometry.last().expect("at least one level").subband_shape
    }

    /// Shape of each level's `z`, `[C−1, P]`.
    pub fn z_shapes(&self) -> Vec<Vec<usize>> {
        self.geometry
            .iter()
            .map(|g| vec![g.channels - 1, g.positions])
            .collect()
    }

    pub fn check_input(&self, x: &[usize]) -> Result<()> {
        if x != self.config.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "flow_forward",
                lhs: x.to_vec(),
                rhs: self.config.input_shape.clone(),
            });
        }
        Ok(())
    }

    /// Per-level `(x^(ℓ), z^(ℓ)) = f^(ℓ)(W x^(ℓ−1))`; returns `y = x^(T)` and the z list.
    pub fn forward_graph(&self, tape: &Tape, p: &[Var], x: Var) -> Result<(Var, Vec<Var>)> {
        self.check_input(&tape.shape(x))?;
        let mut cur = x;
        let mut zs = Vec::with_capacity(self.levels.len());
        for (blocks, geo) in self.levels.iter().zip(&self.geometry) {
            let mut c = analyze_var(tape, cur, &self.bank, self.dims())?;
            for block in blocks {
                c = block.forward(tape, p, c)?;
            }
            let low = tape.slice(c, 0, 0..1)?;
            zs.push(tape.slice(c, 0, 1..geo.channels)?);
            cur = tape.reshape(low, &geo.subband_shape)?;
        }
        Ok((cur, zs))
    }

    /// Level T down to 1: undo the blocks, then synthesize with `Wᵀ`.
    pub fn inverse_graph(
        &self,
        tape: &Tape,
        p: &[Var],
        y: Var,
        zs: &[Var],
        certs: &mut Vec<InversionCertificate>,
    ) -> Result<Var> {
        if zs.len() != self.levels.len() {
            return Err(Error::invalid(format!(
                "{} latent levels supplied, model has {}",
                zs.len(),
                self.levels.len()
            )));
        }
        let expected_y = self.y_shape();
        if tape.shape(y) != expected_y {
            return Err(Error::ShapeMismatch {
                op: "flow_inverse",
                lhs: tape.shape(y),
                rhs: expected_y.to_vec(),
            });
        }
        let mut cur = y;
        for ((blocks, geo), &z) in self.levels.iter().zip(&self.geometry).zip(zs).rev() {
            let zshape = [geo.channels - 1, geo.positions];
            if tape.shape(z) != zshape {
                return Err(Error::ShapeMismatch {
                    op: "flow_inverse",
                    lhs: tape.shape(z),
                    rhs: zshape.to_vec(),
                });
            }
            let low = tape.reshape(cur, &[1, geo.positions])?;
            let mut c = tape.concat(&[low, z], 0)?;
            for block in blocks.iter().rev() {
                c = block.inverse(tape, p, c, self.config.inv_tol, self.config.inv_max_iter, certs)?;
            }
            cur = synthesize_var(tape, c, &self.bank, &geo.subband_shape)?;
        }
        Ok(cur)
    }

    /// Plain-tensor forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let xv = tape.constant(x.clone());
        let (y, zs) = self.forward_graph(&tape, &p, xv)?;
        Ok((tape.value(y), zs.into_iter().map(|z| tape.value(z)).collect()))
    }

    /// Plain-tensor inverse, with the certificates of every fixed-point inversion.
    pub fn inverse_certified(&self, y: &Tensor, zs: &[Tensor]) -> Result<(Tensor, Vec<InversionCertificate>)> {
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let yv = tape.constant(y.clone());
        let zv: Vec<Var> = zs.iter().map(|z| tape.constant(z.clone())).collect();
        let mut certs = Vec::new();
        let x = self.inverse_graph(&tape, &p, yv, &zv, &mut certs)?;
        Ok((tape.value(x), certs))
    }

    pub fn inverse(&self, y: &Tensor, zs: &[Tensor]) -> Result<Tensor> {
        Ok(self.inverse_certified(y, zs)?.0)
    }

    /// Applies block `b` of level `l` to a `[C, P]` coefficient matrix.
    pub fn apply_block(&self, l: usize, b: usize, c: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let cv = tape.constant(c.clone());
        let out = self.levels[l][b].forward(&tape, &p, cv)?;
        Ok(tape.value(out))
    }

    /// Data-dependent ActNorm initialization, level by level and block by block.
    pub fn init_actnorm(&mut self, batch: &[Tensor]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("ActNorm initialization needs a non-empty batch"));
        }
        let mut cur: Vec<Tensor> = batch.to_vec();
        for l in 0..self.levels.len() {
            let mut cs = cur
                .iter()
                .map(|x| {
                    self.check_input_at(l, x)?;
                    Ok(analyze(x, &self.bank, self.dims())?.to_matrix())
                })
                .collect::<Result<Vec<_>>>()?;
            for b in 0..self.levels[l].len() {
                let an = self.levels[l][b].actnorm.clone();
                an.data_init(&mut self.params, &cs);
                cs = cs.iter().map(|c| self.apply_block(l, b, c)).collect::<Result<_>>()?;
            }
            let shape = self.geometry[l].subband_shape.clone();
            let p = self.geometry[l].positions;
            cur = cs
                .iter()
                .map(|c| Tensor::new(shape.clone(), c.data()[..p].to_vec()))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn check_input_at(&self, level: usize, x: &Tensor) -> Result<()> {
        let expected = if level == 0 {
            self.config.input_shape.as_slice()
        } else {
            self.geometry[level - 1].subband_shape.as_slice()
        };
        if x.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "init_actnorm",
                lhs: x.shape().to_vec(),
                rhs: expected.to_vec(),
            });
        }
        Ok(())
    }

    /// Replaces every parameter with Gaussian noise of standard deviation
    /// `scale` (`scale/√fan_in` for matrices), then re-imposes the Lipschitz budget.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        self.randomize_with(seed, scale, scale);
    }

    /// Like [`FlowModel::randomize`] with separate scales for matrices
    /// (`weight_scale/√fan_in`) and for vectors (biases, ActNorm parameters).
    pub fn randomize_with(&mut self, seed: u64, weight_scale: f64, vector_scale: f64) {
        let mut rng = NormalSampler::new(seed, 1);
        for t in self.params.values_mut() {
            let s = if t.rank() == 2 {
                weight_scale / (t.shape()[1] as f64).sqrt()
            } else {
                vector_scale
            };
            for v in t.data_mut() {
                *v = s * rng.sample();
            }
        }
        self.spectral_normalize();
    }

    /// Spectral normalization for every residual block; no-op for couplings.
    pub fn spectral_normalize(&mut self) {
        for blocks in &mut self.levels {
            for block in blocks {
                if let Nonlinearity::IRes(g) = &mut block.g {
                    g.spectral_normalize(&mut self.params);
                }
            }
        }
    }

    /// Orthogonality of every `K`, finiteness of every parameter, and the
    /// Lipschitz budget of every residual block.
    pub fn check_invariants(&self) -> Result<()> {
        for (name, t) in self.params.names().iter().zip(self.params.values()) {
            if !t.all_finite() {
                return Err(Error::Invariant(format!("parameter {name} is not finite")));
            }
        }
        for blocks in &self.levels {
            for block in blocks {
                let k = block.mix.k_matrix(&self.params)?;
                let ktk = k.transpose()?.matmul(&k)?;
                let dev = ktk.max_abs_diff(&Tensor::eye(k.shape()[0]))?;
                if dev >= 1e-10 {
                    return Err(Error::Invariant(format!(
                        "{} is not orthogonal (deviation {dev:e})",
                        self.params.name(block.mix.raw)
                    )));
                }
                if let Nonlinearity::IRes(g) = &block.g {
                    let lip = g.lipschitz_estimate(&self.params);
                    if lip > g.lipschitz + 1e-3 {
                        return Err(Error::Invariant(format!(
                            "residual branch Lipschitz estimate {lip} exceeds {}",
                            g.lipschitz
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes every parameter (and power-iteration state) as LRTF plus `manifest.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.params.names().iter().zip(self.params.values()) {
            t.save(dir.join(format!("{name}.lrtf")))?;
        }
        for (name, u) in self.power_vectors() {
            Tensor::from_vec(u.clone()).save(dir.join(format!("{name}.lrtf")))?;
        }
        let c = &self.config;
        let shape: Vec<String> = c.input_shape.iter().map(usize::to_string).collect();
        let manifest = format!(
            "format = {FORMAT_TAG}\nbank = {}\ninput_shape = {}\nlevels = {}\nblocks = {}\nblock_kind = {}\n\
             hidden = {}\nlipschitz = {}\nalpha = {}\nseed = {}\nstep = {}\ninv_tol = {}\ninv_max_iter = {}\nparams = {}\n",
            c.bank,
            shape.join("x"),
            c.levels,
            c.blocks,
            c.kind,
            c.hidden,
            c.lipschitz,
            c.alpha,
            c.seed,
            self.step,
            c.inv_tol,
            c.inv_max_iter,
            self.params.len()
        );
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    fn power_vectors(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (l, blocks) in self.levels.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                if let Nonlinearity::IRes(g) = &block.g {
                    for (i, u) in g.power_u.iter().enumerate() {
                        out.push((format!("l{l}.b{b}.ires.power_u{i}"), u));
                    }
                }
            }
        }
        out
    }

    /// Reads a checkpoint and validates every invariant before returning it.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let kv = parse_manifest(&text)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::format("checkpoint manifest", format!("missing '{k}'")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::format("checkpoint manifest", format!("bad value for '{k}': '{v}'")))
        }
        if get("format")? != FORMAT_TAG {
            return Err(Error::Unsupported(format!("checkpoint format '{}'", get("format")?)));
        }
        let input_shape = get("input_shape")?
            .split('x')
            .map(|d| num::<usize>("input_shape", d))
            .collect::<Result<Vec<_>>>()?;
        let config = FlowConfig {
            bank: get("bank")?.parse()?,
            input_shape,
            levels: num("levels", get("levels")?)?,
            blocks: num("blocks", get("blocks")?)?,
            kind: get("block_kind")?.parse()?,
            hidden: num("hidden", get("hidden")?)?,
            lipschitz: num("lipschitz", get("lipschitz")?)?,
            alpha: num("alpha", get("alpha")?)?,
            seed: num("seed", get("seed")?)?,
            inv_tol: num("inv_tol", get("inv_tol")?)?,
            inv_max_iter: num("inv_max_iter", get("inv_max_iter")?)?,
        };
        let mut model = FlowModel::new(config)?;
        model.step = num("step", get("step")?)?;
        let count: usize = num("params", get("params")?)?;
        if count != model.params.len() {
            return Err(Error::format(
                "checkpoint manifest",
                format!("{count} parameters listed, architecture has {}", model.params.len()),
            ));
        }
        let values = model
            .params
            .names()
            .iter()
            .map(|n| Tensor::load(dir.join(format!("{n}.lrtf"))))
            .collect::<Result<Vec<_>>>()?;
        model.params.set_all(values)?;
        let names: Vec<String> = model.power_vectors().into_iter().map(|(n, _)| n).collect();
        let mut it = names.iter();
        for blocks in &mut model.levels {
            for block in blocks {
                if let Nonlinearity::IRes(g) = &mut block.g {
                    for u in &mut g.power_u {
                        let name = it.next().expect("power vector names");
                        let t = Tensor::load(dir.join(format!("{name}.lrtf")))?;
                        if t.len() != u.len() {
                            return Err(Error::format("checkpoint", format!("{name} has the wrong length")));
                        }
                        *u = t.into_vec();
                    }
                }
            }
        }
        model.check_invariants()?;
        Ok(model)
    }
}

fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::format("checkpoint manifest", format!("bad line '{l}'")))
        })
        .collect()
}
