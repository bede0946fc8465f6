//! Raw kernels shared by the framelet transform, the tape and the JPEG simulator.
//!
//! Every kernel works on a flat row-major buffer with an explicit shape and
//! treats the chosen axis as periodic.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Splits `shape` around `axis` into (outer, len, inner) element counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Stride-2 circular correlation along `axis`: `out[k] = Σ_j h[j]·x[(2k + j) mod n]`.
pub fn correlate_down(x: &[f64], shape: &[usize], axis: usize, h: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    if axis >= shape.len() {
        return Err(Error::invalid(format!("axis {axis} out of range for shape {shape:?}")));
    }
    let (outer, n, inner) = axis_split(shape, axis);
    if n % 2 != 0 {
        return Err(Error::Indivisible {
            axis,
            len: n,
            divisor: 2,
        });
    }
    let half = n / 2;
    let mut out = vec![0.0; outer * half * inner];
    for o in 0..outer {
        let src = &x[o * n * inner..(o + 1) * n * inner];
        let dst = &mut out[o * half * inner..(o + 1) * half * inner];
        for k in 0..half {
            let row = &mut dst[k * inner..(k + 1) * inner];
            for (j, &hj) in h.iter().enumerate() {
                if hj == 0.0 {
                    continue;
                }
                let s = (2 * k + j) % n;
                for (r, &v) in row.iter_mut().zip(&src[s * inner..(s + 1) * inner]) {
                    *r += hj * v;
                }
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = half;
    Ok((out_shape, out))
}

/// Exact adjoint of [`correlate_down`]: zero-insert upsampling then correlation.
pub fn correlate_up(c: &[f64], shape: &[usize], axis: usize, h: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    if axis >= shape.len() {
        return Err(Error::invalid(format!("axis {axis} out of range for shape {shape:?}")));
    }
    let (outer, half, inner) = axis_split(shape, axis);
    let n = 2 * half;
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        let src = &c[o * half * inner..(o + 1) * half * inner];
        let dst = &mut out[o * n * inner..(o + 1) * n * inner];
        for k in 0..half {
            let row = &src[k * inner..(k + 1) * inner];
            for (j, &hj) in h.iter().enumerate() {
                if hj == 0.0 {
                    continue;
                }
                let s = (2 * k + j) % n;
                for (d, &v) in dst[s * inner..(s + 1) * inner].iter_mut().zip(row) {
                    *d += hj * v;
                }
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = n;
    Ok((out_shape, out))
}

pub const DCT_BLOCK: usize = 8;

/// Orthonormal 8-point DCT-II matrix, `C[u][x] = α(u)·cos((2x+1)uπ/16)`.
pub fn dct_matrix() -> [[f64; DCT_BLOCK]; DCT_BLOCK] {
    let mut c = [[0.0; DCT_BLOCK]; DCT_BLOCK];
    let n = DCT_BLOCK as f64;
    for (u, row) in c.iter_mut().enumerate() {
        let alpha = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = alpha * ((2 * x + 1) as f64 * u as f64 * PI / (2.0 * n)).cos();
        }
    }
    c
}

/// Blockwise 2-D DCT over an `[h, w]` image whose sides are multiples of 8.
/// `inverse` applies the transpose, which is the inverse since the basis is orthonormal.
pub fn block_dct(x: &[f64], h: usize, w: usize, inverse: bool) -> Result<Vec<f64>> {
    if h % DCT_BLOCK != 0 || w % DCT_BLOCK != 0 {
        let (axis, len) = if h % DCT_BLOCK != 0 { (0, h) } else { (1, w) };
        return Err(Error::Indivisible {
            axis,
            len,
            divisor: DCT_BLOCK,
        });
    }
    let c = dct_matrix();
    // forward: B = C X Cᵀ ; inverse: X = Cᵀ B C
    let m = |i: usize, j: usize| if inverse { c[j][i] } else { c[i][j] };
    let mut out = vec![0.0; h * w];
    let mut tmp = [[0.0; DCT_BLOCK]; DCT_BLOCK];
    for by in (0..h).step_by(DCT_BLOCK) {
        for bx in (0..w).step_by(DCT_BLOCK) {
            for (u, trow) in tmp.iter_mut().enumerate() {
                for (xx, t) in trow.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for y in 0..DCT_BLOCK {
                        s += m(u, y) * x[(by + y) * w + bx + xx];
                    }
                    *t = s;
                }
            }
            for u in 0..DCT_BLOCK {
                for v in 0..DCT_BLOCK {
                    let mut s = 0.0;
                    for xx in 0..DCT_BLOCK {
                        s += tmp[u][xx] * m(v, xx);
                    }
                    out[(by + u) * w + bx + v] = s;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlate_up_is_adjoint_of_down() {
        let shape = [3, 8, 2];
        let x: Vec<f64> = (0..48).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let c: Vec<f64> = (0..24).map(|i| ((i * 13 % 7) as f64) * 0.5 - 1.0).collect();
        let h = [0.3, -0.7, 1.1];
        let (_, wx) = correlate_down(&x, &shape, 1, &h).unwrap();
        let (_, wtc) = correlate_up(&c, &[3, 4, 2], 1, &h).unwrap();
        let lhs: f64 = wx.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&wtc).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn odd_axis_is_rejected() {
        let err = correlate_down(&[0.0; 6], &[2, 3], 1, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Indivisible { axis: 1, len: 3, .. }));
    }

    #[test]
    fn dct_round_trip_and_dc() {
        let x: Vec<f64> = (0..128).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = block_dct(&x, 8, 16, false).unwrap();
        let back = block_dct(&b, 8, 16, true).unwrap();
        for (a, r) in x.iter().zip(&back) {
            assert!((a - r).abs() < 1e-13);
        }
        let ones = block_dct(&[1.0; 64], 8, 8, false).unwrap();
        assert!((ones[0] - 8.0).abs() < 1e-13);
        assert!(ones[1..].iter().all(|v| v.abs() < 1e-13));
    }
}
