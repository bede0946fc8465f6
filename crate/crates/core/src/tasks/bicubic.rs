//! Keys bicubic resampling (a = −0.5) by exact factors of 2 with circular boundaries.
//!
//! Pixel centers sit at half-integer positions, so output pixel `j` maps to
//! input coordinate `(j + ½)/s − ½`. Downscaling samples the kernel directly
//! without widening it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BICUBIC_A: f64 = -0.5;

pub fn cubic_kernel(t: f64) -> f64 {
    let a = BICUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resize {
    Half,
    Double,
}

impl Resize {
    fn scale(self) -> f64 {
        match self {
            Resize::Half => 0.5,
            Resize::Double => 2.0,
        }
    }
}

/// Resamples one axis of length `n` to `m`, returning (input index, weight) taps per output.
fn taps(n: usize, m: usize, scale: f64) -> Vec<[(usize, f64); 4]> {
    (0..m)
        .map(|j| {
            let u = (j as f64 + 0.5) / scale - 0.5;
            let base = u.floor() as i64;
            let mut out = [(0usize, 0.0); 4];
            for (k, slot) in out.iter_mut().enumerate() {
                let i = base - 1 + k as i64;
                *slot = (i.rem_euclid(n as i64) as usize, cubic_kernel(u - i as f64));
            }
            out
        })
        .collect()
}

fn resize_axis(x: &[f64], outer: usize, n: usize, inner: usize, m: usize, scale: f64) -> Vec<f64> {
    let t = taps(n, m, scale);
    let mut out = vec![0.0; outer * m * inner];
    for o in 0..outer {
        for (j, tj) in t.iter().enumerate() {
            let dst = (o * m + j) * inner;
            for &(i, w) in tj {
                let src = (o * n + i) * inner;
                for k in 0..inner {
                    out[dst + k] += w * x[src + k];
                }
            }
        }
    }
    out
}

/// Separable bicubic resize of a 1-D or 2-D tensor by ½ or 2 per axis.
pub fn bicubic_resize(x: &Tensor, factor: Resize) -> Result<Tensor> {
    if x.rank() == 0 || x.rank() > 2 {
        return Err(Error::invalid(format!("bicubic resize of shape {:?}", x.shape())));
    }
    let scale = factor.scale();
    let mut shape = x.shape().to_vec();
    let mut data = x.data().to_vec();
    for axis in 0..shape.len() {
        let n = shape[axis];
        if factor == Resize::Half && n % 2 != 0 {
            return Err(Error::Indivisible {
                axis,
                len: n,
                divisor: 2,
            });
        }
        let m = match factor {
            Resize::Half => n / 2,
            Resize::Double => n * 2,
        };
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        data = resize_axis(&data, outer, n, inner, m, scale);
        shape[axis] = m;
    }
    Tensor::new(shape, data)
}

/// Applies the halving `times` times.
pub fn bicubic_downscale(x: &Tensor, times: usize) -> Result<Tensor> {
    (0..times).try_fold(x.clone(), |acc, _| bicubic_resize(&acc, Resize::Half))
}

pub fn bicubic_upscale(x: &Tensor, times: usize) -> Result<Tensor> {
    (0..times).try_fold(x.clone(), |acc, _| bicubic_resize(&acc, Resize::Double))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for &u in &[0.0, 0.25, 0.5, 0.75] {
            let s: f64 = (-2..=2).map(|k| cubic_kernel(u - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
    }

    #[test]
    fn constants_survive() {
        let c = Tensor::full(&[8, 8], 0.3);
        let d = bicubic_resize(&c, Resize::Half).unwrap();
        assert!(d.max_abs_diff(&Tensor::full(&[4, 4], 0.3)).unwrap() < 1e-15);
        let back = bicubic_resize(&bicubic_resize(&d, Resize::Double).unwrap(), Resize::Half).unwrap();
        assert!(back.max_abs_diff(&d).unwrap() < 1e-15);
    }

    #[test]
    fn odd_sizes_rejected_for_downscale() {
        assert!(bicubic_resize(&Tensor::zeros(&[8, 7]), Resize::Half).is_err());
        assert!(bicubic_resize(&Tensor::zeros(&[3]), Resize::Double).is_ok());
    }
}
