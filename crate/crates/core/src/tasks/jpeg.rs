//! Differentiable single-channel JPEG simulator.
//!
//! Per 8×8 block: scale to 0–255 and level-shift by 128, orthonormal DCT-II,
//! divide by the quality-scaled luminance table, round, multiply back,
//! inverse DCT, undo the shift and clamp to [0, 1]. Images whose sides are
//! not multiples of 8 are reflection-padded and cropped afterwards.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::NormalSampler;
use crate::signal::DCT_BLOCK;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Standard luminance quantization table (quality 50), row-major.
pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundingMode {
    /// Uniform noise in (−½, ½) during training, true rounding at evaluation.
    AdditiveNoise,
    /// Rounds on the forward pass and passes the gradient through unchanged.
    StraightThrough,
}

impl fmt::Display for RoundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundingMode::AdditiveNoise => "additive-noise",
            RoundingMode::StraightThrough => "straight-through",
        })
    }
}

impl FromStr for RoundingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive-noise" => Ok(RoundingMode::AdditiveNoise),
            "straight-through" => Ok(RoundingMode::StraightThrough),
            _ => Err(Error::invalid(format!("unknown rounding mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JpegSimConfig {
    pub qf: u32,
    pub mode: RoundingMode,
}

impl JpegSimConfig {
    pub fn new(qf: u32, mode: RoundingMode) -> Result<Self> {
        if !(1..=100).contains(&qf) {
            return Err(Error::invalid(format!("quality factor {qf} outside [1, 100]")));
        }
        Ok(JpegSimConfig { qf, mode })
    }
}

/// Percentage scale applied to the base table: `5000/QF` below 50, else `200 − 2·QF`.
pub fn quality_scale(qf: u32) -> u32 {
    if qf < 50 {
        5000 / qf
    } else {
        200 - 2 * qf
    }
}

/// Quality-scaled table, entries `⌊(base·scale + 50)/100⌋` clamped to [1, 255].
pub fn quant_table(qf: u32) -> Result<[f64; 64]> {
    if !(1..=100).contains(&qf) {
        return Err(Error::invalid(format!("quality factor {qf} outside [1, 100]")));
    }
    let scale = quality_scale(qf);
    let mut q = [0.0; 64];
    for (o, &b) in q.iter_mut().zip(&LUMA_TABLE) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(q)
}

fn padded(n: usize) -> usize {
    n.div_ceil(DCT_BLOCK) * DCT_BLOCK
}

/// Symmetric (edge-excluded) reflection of index `i` into `0..n`.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Shape of the block-aligned working image for an `[h, w]` input.
pub fn padded_shape(h: usize, w: usize) -> [usize; 2] {
    [padded(h), padded(w)]
}

/// Training noise for [`jpeg_simulate_var`], uniform on (−½, ½) over the padded grid.
pub fn rounding_noise(h: usize, w: usize, rng: &mut NormalSampler) -> Tensor {
    let [ph, pw] = padded_shape(h, w);
    Tensor::from_fn(&[ph, pw], |_| rng.uniform(-0.5, 0.5))
}

/// Simulates compression of a `[h, w]` image in [0, 1]. `train_noise` selects
/// the training behaviour of the additive-noise mode; without it the
/// quantizer rounds exactly.
pub fn jpeg_simulate_var(tape: &Tape, img: Var, cfg: JpegSimConfig, train_noise: Option<&Tensor>) -> Result<Var> {
    let (h, w) = match tape.shape(img)[..] {
        [h, w] => (h, w),
        ref s => return Err(Error::invalid(format!("JPEG simulation expects a 2-D image, got {s:?}"))),
    };
    let q = quant_table(cfg.qf)?;
    let [ph, pw] = padded_shape(h, w);

    let mut x = img;
    if (ph, pw) != (h, w) {
        let index: Vec<usize> = (0..ph)
            .flat_map(|r| (0..pw).map(move |c| reflect(r, h) * w + reflect(c, w)))
            .collect();
        x = tape.gather(x, Arc::new(index), &[ph, pw])?;
    }
    let qgrid = Tensor::from_fn(&[ph, pw], |i| {
        let (r, c) = (i / pw, i % pw);
        q[(r % DCT_BLOCK) * DCT_BLOCK + c % DCT_BLOCK]
    });
    let qv = tape.constant(qgrid.clone());
    let inv_q = tape.constant(qgrid.map(|v| 1.0 / v));

    let x = tape.scale(x, 255.0)?;
    let x = tape.add_scalar(x, -128.0)?;
    let coef = tape.block_dct(x, false)?;
    let scaled = tape.mul(coef, inv_q)?;
    let quantized = match (cfg.mode, train_noise) {
        (RoundingMode::AdditiveNoise, Some(noise)) => {
            if noise.shape() != [ph, pw] {
                return Err(Error::ShapeMismatch {
                    op: "jpeg_simulate",
                    lhs: noise.shape().to_vec(),
                    rhs: vec![ph, pw],
                });
            }
            let n = tape.constant(noise.clone());
            tape.add(scaled, n)?
        }
        _ => tape.round_ste(scaled)?,
    };
    let dequant = tape.mul(quantized, qv)?;
    let pixels = tape.block_dct(dequant, true)?;
    let pixels = tape.add_scalar(pixels, 128.0)?;
    let pixels = tape.scale(pixels, 1.0 / 255.0)?;
    let mut out = tape.clamp(pixels, 0.0, 1.0)?;
    if (ph, pw) != (h, w) {
        let index: Vec<usize> = (0..h).flat_map(|r| (0..w).map(move |c| r * pw + c)).collect();
        out = tape.gather(out, Arc::new(index), &[h, w])?;
    }
    Ok(out)
}

/// Evaluation-mode simulation on a plain tensor.
pub fn jpeg_simulate(img: &Tensor, cfg: JpegSimConfig) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.constant(img.clone());
    let out = jpeg_simulate_var(&tape, x, cfg, None)?;
    Ok(tape.value(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_fifty_uses_base_table() {
        assert_eq!(quality_scale(50), 100);
        let q = quant_table(50).unwrap();
        for (a, &b) in q.iter().zip(&LUMA_TABLE) {
            assert_eq!(*a, b as f64);
        }
        assert!(quant_table(100).unwrap().iter().all(|&v| v == 1.0));
        assert!(quant_table(1).unwrap().iter().all(|&v| v <= 255.0));
        assert!(quant_table(0).is_err());
        assert!(JpegSimConfig::new(101, RoundingMode::StraightThrough).is_err());
    }

    #[test]
    fn constant_half_gray_survives() {
        // value 0.5 → 127.5 − 128 = −0.5 per pixel; DC = 8·(−0.5) = −4, −4/16 rounds to 0,
        // so the block decodes to exactly 128/255.
        let cfg = JpegSimConfig::new(50, RoundingMode::AdditiveNoise).unwrap();
        let out = jpeg_simulate(&Tensor::full(&[8, 8], 0.5), cfg).unwrap();
        let step = 16.0 / 8.0 / 255.0;
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() <= step));
        assert!(out.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-12));
    }

    #[test]
    fn reflection_indices() {
        assert_eq!((0..8).map(|i| reflect(i, 5)).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(padded_shape(10, 16), [16, 16]);
    }

    #[test]
    fn non_aligned_sizes_are_cropped_back() {
        let cfg = JpegSimConfig::new(75, RoundingMode::StraightThrough).unwrap();
        let img = Tensor::from_fn(&[10, 12], |i| (i % 13) as f64 / 13.0);
        let out = jpeg_simulate(&img, cfg).unwrap();
        assert_eq!(out.shape(), &[10, 12]);
    }
}
