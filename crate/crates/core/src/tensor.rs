//! Dense row-major float-64 tensors and the LRTF binary container.
//!
//! A tensor's buffer sits behind an `Arc`, so clones are cheap and a tensor
//! can be bound as a leaf on many tapes at once. Mutation goes through
//! [`Tensor::data_mut`], which copies on write when the buffer is shared.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

const LRTF_MAGIC: &[u8; 4] = b"LRTF";
const LRTF_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Rank-1 tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty tensor");
        Tensor {
            shape: vec![data.len()],
            data: Arc::new(data),
        }
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![value]),
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data: Arc::new(data),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new((0..n).map(&mut f).collect()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self - other|` over all entries.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product of rank-2 tensors, or matrix-vector when `other` is rank 1.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (out_shape, m, k, n) = matmul_dims(&self.shape, &other.shape)?;
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(out_shape, out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(format!("transpose of rank-{} tensor", self.rank())));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn write_lrtf(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(LRTF_MAGIC)?;
        w.write_all(&[LRTF_VERSION, self.shape.len() as u8])?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_lrtf(mut r: impl Read) -> Result<Tensor> {
        let bad = |detail: &str| Error::format("LRTF tensor", detail);
        let mut head = [0u8; 6];
        r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != LRTF_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        if head[4] != LRTF_VERSION {
            return Err(Error::Unsupported(format!("LRTF version {}", head[4])));
        }
        let rank = head[5] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut word = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut word).map_err(|_| bad("truncated dims"))?;
            let d = u64::from_le_bytes(word);
            if d == 0 {
                return Err(bad("zero dimension"));
            }
            shape.push(usize::try_from(d).map_err(|_| bad("dimension overflow"))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("element count overflow"))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut word).map_err(|_| bad("truncated payload"))?;
            data.push(f64::from_le_bytes(word));
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe).map_err(|_| bad("read error"))? != 0 {
            return Err(bad("trailing bytes after payload"));
        }
        Tensor::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_lrtf(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor::read_lrtf(BufReader::new(file))
    }
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, usize, usize, usize)> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[0], a[1]);
    match b {
        [k2, n] if *k2 == k => Ok((vec![m, *n], m, k, *n)),
        [k2] if *k2 == k => Ok((vec![m], m, k, 1)),
        _ => Err(mismatch()),
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 1 {
        for (o, row) in out.iter_mut().zip(a.chunks_exact(k)) {
            *o += dot_raw(row, b);
        }
        return;
    }
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[k, n] += Aᵀ B` for `A: [m, k]`, `B: [m, n]`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m, k] += A Bᵀ` for `A: [m, n]`, `B: [k, n]`.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot_raw(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

fn dot_raw(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        let x: &[f64; LANES] = x.try_into().expect("exact chunk");
        let y: &[f64; LANES] = y.try_into().expect("exact chunk");
        for j in 0..LANES {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = acc.iter().sum::<f64>();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lrtf_layout_is_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_lrtf(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"LRTF");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 2);
        assert_eq!(u64::from_le_bytes(buf[6..14].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[14..22].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[22..30].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 6 + 16 + 16);
        assert_eq!(Tensor::read_lrtf(&buf[..]).unwrap(), t);
    }

    #[test]
    fn lrtf_rejects_garbage() {
        assert!(Tensor::read_lrtf(&b"LRTX\x01\x00"[..]).is_err());
        assert!(matches!(
            Tensor::read_lrtf(&b"LRTF\x02\x00"[..]),
            Err(Error::Unsupported(_))
        ));
        let mut buf = Vec::new();
        Tensor::from_vec(vec![1.0, 2.0]).write_lrtf(&mut buf).unwrap();
        buf.pop();
        assert!(Tensor::read_lrtf(&buf[..]).is_err());
    }

    #[test]
    fn scalar_tensor_round_trips() {
        let mut buf = Vec::new();
        Tensor::scalar(3.25).write_lrtf(&mut buf).unwrap();
        let back = Tensor::read_lrtf(&buf[..]).unwrap();
        assert_eq!(back.shape(), &[] as &[usize]);
        assert_eq!(back.item(), 3.25);
    }

    #[test]
    fn shape_validation() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::eye(3).reshape(&[9]).is_ok());
        assert!(Tensor::eye(3).reshape(&[4, 2]).is_err());
    }

    #[test]
    fn matmul_matrix_vector() {
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = Tensor::from_vec(vec![1.0, 0.0, -1.0]);
        assert_eq!(w.matmul(&x).unwrap().data(), &[-2.0, -2.0]);
        assert!(w.matmul(&w).is_err());
        let wt = w.transpose().unwrap();
        assert_eq!(wt.shape(), &[3, 2]);
        assert_eq!(w.matmul(&wt).unwrap().data(), &[14.0, 32.0, 32.0, 77.0]);
    }
}
