//! Small deterministic patch sets for desk-scale training.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::NormalSampler;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    SyntheticBandlimited,
    ImagePatches,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::SyntheticBandlimited => "synthetic-bandlimited",
            DatasetKind::ImagePatches => "image-patches",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic-bandlimited" => Ok(DatasetKind::SyntheticBandlimited),
            "image-patches" => Ok(DatasetKind::ImagePatches),
            _ => Err(Error::invalid(format!("unknown dataset kind '{s}'"))),
        }
    }
}

/// Highest cosine frequency, in cycles per patch side.
pub const MAX_CYCLES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub patches: Vec<Tensor>,
    pub kind: DatasetKind,
    pub seed: u64,
}

impl ToyDataset {
    /// `count` patches of shape `[h, w]`: 0.5 plus one to four random 2-D
    /// cosines of at most [`MAX_CYCLES`] cycles, plus one straight step edge,
    /// clamped to [0, 1].
    pub fn synthetic(count: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        if count == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("dataset needs a positive count and patch size"));
        }
        let mut rng = NormalSampler::new(seed, 0);
        let patches = (0..count).map(|_| synthetic_patch(&mut rng, h, w)).collect();
        Ok(ToyDataset {
            patches,
            kind: DatasetKind::SyntheticBandlimited,
            seed,
        })
    }

    /// `count` random `[h, w]` crops of a 2-D image with values in [0, 1].
    pub fn image_patches(image: &Tensor, count: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        let (ih, iw) = match image.shape() {
            &[ih, iw] => (ih, iw),
            s => return Err(Error::invalid(format!("expected a 2-D image, got {s:?}"))),
        };
        if count == 0 || h == 0 || w == 0 || h > ih || w > iw {
            return Err(Error::invalid(format!("cannot cut {count} patches of {h}x{w} from {ih}x{iw}")));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        let mut rng = NormalSampler::new(seed, 0);
        let patches = (0..count)
            .map(|_| {
                let r0 = rng.index(ih - h + 1);
                let c0 = rng.index(iw - w + 1);
                Tensor::from_fn(&[h, w], |i| image.data()[(r0 + i / w) * iw + c0 + i % w])
            })
            .collect();
        Ok(ToyDataset {
            patches,
            kind: DatasetKind::ImagePatches,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_shape(&self) -> &[usize] {
        self.patches[0].shape()
    }
}

fn synthetic_patch(rng: &mut NormalSampler, h: usize, w: usize) -> Tensor {
    let terms = 1 + rng.index(4);
    let waves: Vec<(f64, f64, f64, f64)> = (0..terms)
        .map(|_| {
            let fy = rng.index(MAX_CYCLES + 1) as f64;
            let fx = rng.index(MAX_CYCLES + 1) as f64;
            let amp = rng.uniform(0.05, 0.2);
            let phase = rng.uniform(0.0, 2.0 * PI);
            (fy, fx, amp, phase)
        })
        .collect();
    let theta = rng.uniform(0.0, 2.0 * PI);
    let (nx, ny) = (theta.cos(), theta.sin());
    let offset = rng.uniform(-0.25, 0.25);
    let step = rng.uniform(-0.3, 0.3);
    Tensor::from_fn(&[h, w], |i| {
        let (r, c) = ((i / w) as f64, (i % w) as f64);
        let mut v = 0.5;
        for &(fy, fx, amp, phase) in &waves {
            v += amp * (2.0 * PI * (fy * r / h as f64 + fx * c / w as f64) + phase).cos();
        }
        let u = (c + 0.5) / w as f64 - 0.5;
        let t = (r + 0.5) / h as f64 - 0.5;
        if u * nx + t * ny > offset {
            v += step;
        }
        v.clamp(0.0, 1.0)
    })
}
