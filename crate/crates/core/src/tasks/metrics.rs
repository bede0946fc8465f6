//! Reconstruction metrics on single-channel images.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `10·log₁₀(peak²/mse)`; `f64::INFINITY` when the inputs are identical.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "mse")?;
    Ok(a.sub(b)?.norm_sq() / a.len() as f64)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g1: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g1 {
        for b in &g1 {
            w.push(a * b);
        }
    }
    w
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows (σ = 1.5),
/// dynamic range 1.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "ssim")?;
    let (h, w) = match a.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::invalid(format!("ssim expects a 2-D image, got {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels")));
    }
    let win = gaussian_window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let g = win[dy * SSIM_WINDOW + dx];
                    let i = (y + dy) * w + x + dx;
                    let (va, vb) = (ad[i], bd[i]);
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images() {
        let a = Tensor::from_fn(&[16, 16], |i| (i as f64 * 0.1).sin() * 0.5 + 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_psnr() {
        let a = Tensor::from_fn(&[8, 8], |i| (i % 7) as f64 / 10.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn inverted_checkerboard() {
        let a = Tensor::from_fn(&[16, 16], |i| ((i / 16 + i % 16) % 2) as f64);
        let b = a.map(|v| 1.0 - v);
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.1, "ssim {s}");
        assert!(s < -0.9);
    }

    #[test]
    fn shape_errors() {
        assert!(psnr(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[4]), 1.0).is_err());
        assert!(ssim(&Tensor::zeros(&[8, 8]), &Tensor::zeros(&[8, 8])).is_err());
    }
}
