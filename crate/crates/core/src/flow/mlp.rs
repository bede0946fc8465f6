use crate::error::Result;
use crate::rng::NormalSampler;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::params::{ParamId, ParamSet};

/// Fully connected network with tanh between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
    pub sizes: Vec<usize>,
}

impl Mlp {
    /// Registers weights `[out, in]` and biases under `prefix`. Weights are
    /// Glorot-normal; with `zero_last` the output layer starts at zero.
    pub fn new(params: &mut ParamSet, prefix: &str, sizes: &[usize], zero_last: bool, init: &mut NormalSampler) -> Mlp {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut layers = Vec::new();
        let last = sizes.len() - 2;
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let w = if zero_last && i == last {
                Tensor::zeros(&[fan_out, fan_in])
            } else {
                let data = init.fill(fan_in * fan_out).into_iter().map(|v| v * std).collect();
                Tensor::new(vec![fan_out, fan_in], data).expect("layer shape")
            };
            let wid = params.push(format!("{prefix}.w{i}"), w);
            let bid = params.push(format!("{prefix}.b{i}"), Tensor::zeros(&[fan_out]));
            layers.push((wid, bid));
        }
        Mlp {
            layers,
            sizes: sizes.to_vec(),
        }
    }

    pub fn forward(&self, tape: &Tape, p: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wx = tape.matmul(p[w.0], h)?;
            h = tape.add(wx, p[b.0])?;
            if i + 1 < self.layers.len() {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }
}
