//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A [`Tape`] is rebuilt for every evaluation. Each primitive appends a node
//! holding its value; [`Tape::backward`] walks the nodes in reverse creation
//! order. Node ids therefore strictly increase and the graph is acyclic by
//! construction.

use std::cell::RefCell;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::signal;
use crate::tensor::{matmul_dims, matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Elementwise function with a user-supplied derivative.
pub type UnaryFn = fn(f64) -> f64;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Tanh(Var),
    Recip(Var),
    Abs(Var),
    Sum(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Inv(Var),
    Reshape(Var),
    Slice { x: Var, axis: usize, range: Range<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Gather { x: Var, index: Arc<Vec<usize>> },
    ConvDown { x: Var, axis: usize, filter: Arc<Vec<f64>> },
    ConvUp { x: Var, axis: usize, filter: Arc<Vec<f64>> },
    BlockDct { x: Var, inverse: bool },
    RoundSte(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Custom { x: Var, df: UnaryFn },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Tanh(..) => "tanh",
            Op::Recip(..) => "recip",
            Op::Abs(..) => "abs",
            Op::Sum(..) => "sum",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Inv(..) => "inv",
            Op::Reshape(..) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Gather { .. } => "gather",
            Op::ConvDown { .. } => "conv_down",
            Op::ConvUp { .. } => "conv_up",
            Op::BlockDct { .. } => "block_dct",
            Op::RoundSte(..) => "round_ste",
            Op::Clamp { .. } => "clamp",
            Op::Custom { .. } => "custom",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.adjoints[v.0] {
            Some(a) => Tensor::new(shape.clone(), a.clone()).expect("adjoint shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn broadcast_pair(a: &Tensor, b: &Tensor, op: &'static str) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if a.rank() == 0 {
        Ok(b.shape().to_vec())
    } else if b.rank() == 0 {
        Ok(a.shape().to_vec())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn binary_map(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_pair(a, b, op)?;
    let (ad, bd) = (a.data(), b.data());
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| {
            let x = if ad.len() == 1 { ad[0] } else { ad[i] };
            let y = if bd.len() == 1 { bd[0] } else { bd[i] };
            f(x, y)
        })
        .collect();
    Tensor::new(shape, data)
}

fn reduce_into(target: &mut [f64], contrib: impl Iterator<Item = f64>) {
    if target.len() == 1 {
        target[0] += contrib.sum::<f64>();
    } else {
        for (t, c) in target.iter_mut().zip(contrib) {
            *t += c;
        }
    }
}

fn transpose_raw(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_raw(Op::Constant, value, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Op names of every node, in creation order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op.name()).collect()
    }

    fn push_raw(&self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value, needs_grad });
        Var(nodes.len() - 1)
    }

    fn push(&self, op: Op, inputs: &[Var], value: Tensor) -> Result<Var> {
        let id = self.len();
        if !value.all_finite() {
            return Err(Error::NonFinite { node: id, op: op.name() });
        }
        let needs_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].needs_grad)
        };
        Ok(self.push_raw(op, value, needs_grad))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = binary_map(&self.value(a), &self.value(b), "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), &[a, b], v)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = binary_map(&self.value(a), &self.value(b), "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), &[a, b], v)
    }

    /// Elementwise product; one side may be rank 0.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = binary_map(&self.value(a), &self.value(b), "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), &[a, b], v)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let v = binary_map(&self.value(a), &self.value(b), "div", |x, y| x / y)?;
        self.push(Op::Div(a, b), &[a, b], v)
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), &[a], v)
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), &[a], v)
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), &[a], v)
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), &[a], v)
    }

    pub fn recip(&self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(Op::Recip(a), &[a], v)
    }

    pub fn abs(&self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), &[a], v)
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), &[a], v)
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// `Σ aᵢ²`.
    pub fn sum_squares(&self, a: Var) -> Result<Var> {
        let sq = self.square(a)?;
        self.sum(sq)
    }

    /// `[m,k]·[k,n]` or `[m,k]·[k]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(&self.value(b))?;
        self.push(Op::MatMul(a, b), &[a, b], v)
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push(Op::Transpose(a), &[a], v)
    }

    /// Inverse of a square matrix.
    pub fn inv(&self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = match t.shape() {
            [r, c] if r == c => *r,
            s => return Err(Error::invalid(format!("inverse of non-square shape {s:?}"))),
        };
        let m = DMatrix::from_row_slice(n, n, t.data());
        let inv = m.try_inverse().ok_or(Error::Singular)?;
        let v = Tensor::new(vec![n, n], inv.transpose().as_slice().to_vec())?;
        self.push(Op::Inv(a), &[a], v)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.push(Op::Reshape(a), &[a], v)
    }

    pub fn slice(&self, a: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() || range.start >= range.end || range.end > t.shape()[axis] {
            return Err(Error::invalid(format!(
                "slice {range:?} on axis {axis} of shape {:?}",
                t.shape()
            )));
        }
        let (outer, n, inner) = signal::axis_split(t.shape(), axis);
        let len = range.end - range.start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            out.extend_from_slice(&t.data()[base + range.start * inner..base + range.end * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::new(shape, out)?;
        self.push(Op::Slice { x: a, axis, range }, &[a], v)
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<Tensor> = xs.iter().map(|&x| self.value(x)).collect();
        let first = vals
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        if axis >= first.rank() {
            return Err(Error::invalid(format!("concat axis {axis} of shape {:?}", first.shape())));
        }
        for v in &vals[1..] {
            let ok = v.rank() == first.rank()
                && v.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = signal::axis_split(first.shape(), axis);
        let total: usize = vals.iter().map(|v| v.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let n = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let v = Tensor::new(shape, out)?;
        self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
            v,
        )
    }

    /// `out[i] = x.flat[index[i]]`, reshaped to `shape`. Indices may repeat.
    pub fn gather(&self, a: Var, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.len()) {
            return Err(Error::invalid(format!("gather index {bad} out of range {}", t.len())));
        }
        let data = index.iter().map(|&i| t.data()[i]).collect();
        let v = Tensor::new(shape.to_vec(), data)?;
        self.push(Op::Gather { x: a, index }, &[a], v)
    }

    /// Repeats a rank-1 tensor of length `c` into `[c, p]` (each entry along a row).
    pub fn tile_rows(&self, a: Var, p: usize) -> Result<Var> {
        let c = self.value(a).len();
        let index: Vec<usize> = (0..c).flat_map(|i| std::iter::repeat_n(i, p)).collect();
        self.gather(a, Arc::new(index), &[c, p])
    }

    /// Stride-2 circular correlation with a constant filter along `axis`.
    pub fn conv_down(&self, a: Var, axis: usize, filter: Arc<Vec<f64>>) -> Result<Var> {
        let t = self.value(a);
        let (shape, data) = signal::correlate_down(t.data(), t.shape(), axis, &filter)?;
        let v = Tensor::new(shape, data)?;
        self.push(Op::ConvDown { x: a, axis, filter }, &[a], v)
    }

    /// Adjoint of [`Tape::conv_down`].
    pub fn conv_up(&self, a: Var, axis: usize, filter: Arc<Vec<f64>>) -> Result<Var> {
        let t = self.value(a);
        let (shape, data) = signal::correlate_up(t.data(), t.shape(), axis, &filter)?;
        let v = Tensor::new(shape, data)?;
        self.push(Op::ConvUp { x: a, axis, filter }, &[a], v)
    }

    /// Blockwise orthonormal 8×8 DCT of a rank-2 tensor.
    pub fn block_dct(&self, a: Var, inverse: bool) -> Result<Var> {
        let t = self.value(a);
        let (h, w) = match t.shape() {
            [h, w] => (*h, *w),
            s => return Err(Error::invalid(format!("block_dct expects rank 2, got {s:?}"))),
        };
        let data = signal::block_dct(t.data(), h, w, inverse)?;
        let v = Tensor::new(vec![h, w], data)?;
        self.push(Op::BlockDct { x: a, inverse }, &[a], v)
    }

    /// Rounds half away from zero on the forward pass; identity gradient.
    pub fn round_ste(&self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::round);
        self.push(Op::RoundSte(a), &[a], v)
    }

    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp { x: a, lo, hi }, &[a], v)
    }

    /// Elementwise `f` whose derivative is taken to be `df`.
    pub fn custom_unary(&self, a: Var, f: UnaryFn, df: UnaryFn) -> Result<Var> {
        let v = self.value(a).map(f);
        self.push(Op::Custom { x: a, df }, &[a], v)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.0].value.shape().to_vec();
        if nodes[root.0].value.len() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if node.needs_grad {
                self.propagate(&nodes, node, &g, &mut adj)?;
            }
            adj[id] = Some(g);
        }

        let mut adjoints = adj;
        adjoints.resize(nodes.len(), None);
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { adjoints, shapes })
    }

    fn propagate(&self, nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, contrib: &mut dyn Iterator<Item = f64>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            reduce_into(slot, contrib);
        };
        let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let n = g.len();

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(*a, &mut g.iter().copied());
                acc(*b, &mut g.iter().copied());
            }
            Op::Sub(a, b) => {
                acc(*a, &mut g.iter().copied());
                acc(*b, &mut g.iter().map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut (0..n).map(|i| g[i] * pick(bd, i)));
                acc(*b, &mut (0..n).map(|i| g[i] * pick(ad, i)));
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut (0..n).map(|i| g[i] / pick(bd, i)));
                acc(
                    *b,
                    &mut (0..n).map(|i| {
                        let bv = pick(bd, i);
                        -g[i] * pick(ad, i) / (bv * bv)
                    }),
                );
            }
            Op::Scale(a, c) => acc(*a, &mut g.iter().map(|x| c * x)),
            Op::AddScalar(a) => acc(*a, &mut g.iter().copied()),
            Op::Exp(a) => {
                let out = node.value.data();
                acc(*a, &mut g.iter().zip(out).map(|(g, o)| g * o));
            }
            Op::Tanh(a) => {
                let out = node.value.data();
                acc(*a, &mut g.iter().zip(out).map(|(g, o)| g * (1.0 - o * o)));
            }
            Op::Recip(a) => {
                let out = node.value.data();
                acc(*a, &mut g.iter().zip(out).map(|(g, o)| -g * o * o));
            }
            Op::Abs(a) => {
                let x = val(*a).data();
                acc(*a, &mut g.iter().zip(x).map(|(g, x)| g * x.signum() * (*x != 0.0) as u8 as f64));
            }
            Op::Sum(a) => {
                let len = val(*a).len();
                acc(*a, &mut std::iter::repeat_n(g[0], len));
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let (_, m, k, nn) = matmul_dims(at.shape(), bt.shape())?;
                if nodes[a.0].needs_grad {
                    // dA = G Bᵀ
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(g, bt.data(), &mut da, m, k, nn);
                    acc(*a, &mut da.into_iter());
                }
                if nodes[b.0].needs_grad {
                    // dB = Aᵀ G
                    let mut db = vec![0.0; k * nn];
                    matmul_tn_into(at.data(), g, &mut db, m, k, nn);
                    acc(*b, &mut db.into_iter());
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                acc(*a, &mut transpose_raw(g, s[0], s[1]).into_iter());
            }
            Op::Inv(a) => {
                // d(A⁻¹) = −A⁻ᵀ G A⁻ᵀ
                let k = node.value.shape()[0];
                let inv_t = transpose_raw(node.value.data(), k, k);
                let mut tmp = vec![0.0; k * k];
                matmul_into(&inv_t, g, &mut tmp, k, k, k);
                let mut da = vec![0.0; k * k];
                matmul_into(&tmp, &inv_t, &mut da, k, k, k);
                acc(*a, &mut da.into_iter().map(|x| -x));
            }
            Op::Reshape(a) => acc(*a, &mut g.iter().copied()),
            Op::Slice { x, axis, range } => {
                let src = val(*x);
                let (outer, len, inner) = signal::axis_split(src.shape(), *axis);
                let mut full = vec![0.0; src.len()];
                let w = range.end - range.start;
                for o in 0..outer {
                    let dst = o * len * inner + range.start * inner;
                    full[dst..dst + w * inner].copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
                }
                acc(*x, &mut full.into_iter());
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = signal::axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = val(x).shape()[*axis];
                    let mut part = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        part.extend_from_slice(&g[base..base + len * inner]);
                    }
                    acc(x, &mut part.into_iter());
                    offset += len;
                }
            }
            Op::Gather { x, index } => {
                let mut full = vec![0.0; val(*x).len()];
                for (gi, &i) in g.iter().zip(index.iter()) {
                    full[i] += gi;
                }
                acc(*x, &mut full.into_iter());
            }
            Op::ConvDown { x, axis, filter } => {
                let (_, up) = signal::correlate_up(g, node.value.shape(), *axis, filter)?;
                acc(*x, &mut up.into_iter());
            }
            Op::ConvUp { x, axis, filter } => {
                let (_, down) = signal::correlate_down(g, node.value.shape(), *axis, filter)?;
                acc(*x, &mut down.into_iter());
            }
            Op::BlockDct { x, inverse } => {
                let s = node.value.shape();
                let back = signal::block_dct(g, s[0], s[1], !inverse)?;
                acc(*x, &mut back.into_iter());
            }
            Op::RoundSte(a) => acc(*a, &mut g.iter().copied()),
            Op::Clamp { x, lo, hi } => {
                let xv = val(*x).data();
                acc(
                    *x,
                    &mut g
                        .iter()
                        .zip(xv)
                        .map(|(g, v)| if (*lo..=*hi).contains(v) { *g } else { 0.0 }),
                );
            }
            Op::Custom { x, df } => {
                let xv = val(*x).data();
                acc(*x, &mut g.iter().zip(xv).map(|(g, v)| g * df(*v)));
            }
        }
        Ok(())
    }
}

/// Result of [`forward_eval`]: the tape, the leaves bound to each parameter, and the root.
#[derive(Debug)]
pub struct Evaluation {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub root: Var,
}

impl Evaluation {
    pub fn value(&self) -> Tensor {
        self.tape.value(self.root)
    }

    /// Gradient for every binding, in binding order.
    pub fn backward(&self) -> Result<Vec<Tensor>> {
        let grads = self.tape.backward(self.root)?;
        Ok(self.params.iter().map(|&p| grads.get(p)).collect())
    }
}

/// Builds `graph` on a fresh tape with each binding as a differentiable leaf.
pub fn forward_eval<G>(graph: G, bindings: &[Tensor]) -> Result<Evaluation>
where
    G: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let params: Vec<Var> = bindings.iter().map(|b| tape.leaf(b.clone())).collect();
    let root = graph(&tape, &params)?;
    Ok(Evaluation { tape, params, root })
}

pub const FD_EPS: f64 = 1e-6;

/// Largest componentwise relative error between backward and central differences
/// for binding `param`.
pub fn fd_check<G>(graph: G, bindings: &[Tensor], param: usize, eps: f64) -> Result<f64>
where
    G: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let all: Vec<usize> = (0..bindings[param].len()).collect();
    fd_check_components(graph, bindings, param, eps, &all)
}

/// [`fd_check`] restricted to the listed flat components.
pub fn fd_check_components<G>(
    graph: G,
    bindings: &[Tensor],
    param: usize,
    eps: f64,
    components: &[usize],
) -> Result<f64>
where
    G: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if param >= bindings.len() {
        return Err(Error::invalid(format!("no binding {param}")));
    }
    let eval = forward_eval(&graph, bindings)?;
    if eval.value().len() != 1 {
        return Err(Error::NonScalarRoot(eval.value().shape().to_vec()));
    }
    let analytic = eval.backward()?.swap_remove(param);
    let mut worst: f64 = 0.0;
    let mut probe = bindings.to_vec();
    for &c in components {
        let base = bindings[param].data()[c];
        probe[param].data_mut()[c] = base + eps;
        let fp = forward_eval(&graph, &probe)?.value().item();
        probe[param].data_mut()[c] = base - eps;
        let fm = forward_eval(&graph, &probe)?.value().item();
        probe[param].data_mut()[c] = base;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[c];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn square_value_and_gradient() {
        let e = forward_eval(|tp, p| tp.mul(p[0], p[0]), &[Tensor::scalar(3.0)]).unwrap();
        assert_eq!(e.value().item(), 9.0);
        assert_eq!(e.backward().unwrap()[0].item(), 6.0);
    }

    #[test]
    fn exp_of_zeros_and_sum_exp_gradient() {
        let e = forward_eval(|tp, p| tp.exp(p[0]), &[Tensor::zeros(&[4])]).unwrap();
        assert_eq!(e.value().data(), &[1.0; 4]);

        let g = |tp: &Tape, p: &[Var]| {
            let e = tp.exp(p[0])?;
            tp.sum(e)
        };
        let e = forward_eval(g, &[t(&[0.0, 2f64.ln()])]).unwrap();
        let grad = e.backward().unwrap().remove(0);
        assert!((grad.data()[0] - 1.0).abs() < 1e-15);
        assert!((grad.data()[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let g = |tp: &Tape, p: &[Var]| tp.tanh(p[0]);
        let e = forward_eval(g, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(e.backward().unwrap()[0].item(), 1.0);
    }

    #[test]
    fn identity_matmul() {
        let w = Tensor::eye(2);
        let e = forward_eval(|tp, p| tp.matmul(p[0], p[1]), &[w, t(&[1.0, 2.0])]).unwrap();
        assert_eq!(e.value().data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let err = forward_eval(|tp, p| tp.add(p[0], p[1]), &[t(&[1.0, 2.0]), t(&[1.0, 2.0, 3.0])]).unwrap_err();
        match err {
            Error::ShapeMismatch { op, lhs, rhs } => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_names_node() {
        let err = forward_eval(|tp, p| tp.recip(p[0]), &[Tensor::scalar(0.0)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { node: 1, op: "recip" }));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let e = forward_eval(|tp, p| tp.exp(p[0]), &[t(&[1.0, 2.0])]).unwrap();
        assert!(matches!(e.backward(), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn scalar_broadcast_gradients_reduce() {
        let g = |tp: &Tape, p: &[Var]| {
            let m = tp.mul(p[0], p[1])?;
            tp.sum(m)
        };
        let e = forward_eval(g, &[Tensor::scalar(2.0), t(&[1.0, 2.0, 3.0])]).unwrap();
        let grads = e.backward().unwrap();
        assert_eq!(grads[0].item(), 6.0);
        assert_eq!(grads[1].data(), &[2.0, 2.0, 2.0]);
        let bad = forward_eval(|tp, p| tp.mul(p[0], p[1]), &[t(&[1.0]), t(&[1.0, 2.0])]);
        assert!(bad.is_err());
    }

    #[test]
    fn polynomial_fd_is_tight() {
        let g = |tp: &Tape, p: &[Var]| {
            let x2 = tp.mul(p[0], p[0])?;
            let x3 = tp.mul(x2, p[0])?;
            let a = tp.scale(x3, 0.5)?;
            let b = tp.sub(a, x2)?;
            let c = tp.add_scalar(b, 3.0)?;
            tp.sum(c)
        };
        let x = t(&[0.7, -1.3, 1.9, 0.2]);
        assert!(fd_check(g, &[x], 0, FD_EPS).unwrap() < 1e-7);
    }

    #[test]
    fn wrong_adjoint_is_detected() {
        fn cube(x: f64) -> f64 {
            x * x * x
        }
        fn wrong(x: f64) -> f64 {
            2.0 * x * x
        }
        let g = |tp: &Tape, p: &[Var]| {
            let c = tp.custom_unary(p[0], cube, wrong)?;
            tp.sum(c)
        };
        assert!(fd_check(g, &[t(&[0.5, 1.5, -1.0])], 0, FD_EPS).unwrap() > 1e-2);
    }

    #[test]
    fn inverse_gradient() {
        let g = |tp: &Tape, p: &[Var]| {
            let i = tp.inv(p[0])?;
            let w = tp.constant(Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0])?);
            let m = tp.mul(i, w)?;
            tp.sum(m)
        };
        let a = Tensor::new(vec![2, 2], vec![2.0, 0.3, -0.4, 1.5]).unwrap();
        assert!(fd_check(g, &[a], 0, FD_EPS).unwrap() < 1e-7);
        let singular = Tensor::new(vec![2, 2], vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(forward_eval(|tp, p| tp.inv(p[0]), &[singular]), Err(Error::Singular)));
    }

    #[test]
    fn replay_is_identical() {
        let g = |tp: &Tape, p: &[Var]| {
            let a = tp.tanh(p[0])?;
            let b = tp.exp(a)?;
            tp.sum(b)
        };
        let x = t(&[0.1, 0.2, -0.3]);
        let e1 = forward_eval(g, &[x.clone()]).unwrap();
        let e2 = forward_eval(g, &[x]).unwrap();
        assert_eq!(e1.tape.len(), e2.tape.len());
        assert_eq!(e1.tape.op_names(), e2.tape.op_names());
        for i in 0..e1.tape.len() {
            assert_eq!(e1.tape.value(Var(i)), e2.tape.value(Var(i)));
        }
    }

    #[test]
    fn constants_get_no_gradient_work() {
        let tp = Tape::new();
        let c = tp.constant(t(&[1.0, 2.0]));
        let x = tp.leaf(t(&[3.0, 4.0]));
        let y = tp.mul(c, x).unwrap();
        let s = tp.sum(y).unwrap();
        let g = tp.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, 2.0]);
        assert_eq!(g.get(c).data(), &[0.0, 0.0]);
    }
}
