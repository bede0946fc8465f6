//! AdamW with bias-corrected moments and decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimState {
    /// Fresh state with β₁ = 0.9, β₂ = 0.99, ε = 1e-8 and no weight decay.
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        OptimState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::invalid(format!("betas ({}, {}) outside (0,1)", self.beta1, self.beta2)));
        }
        if !(self.lr >= 0.0 && self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("negative learning rate, epsilon or weight decay"));
        }
        Ok(())
    }
}

pub fn adamw_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    state.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        p.expect_same_shape(g, "adamw_step")?;
        p.expect_same_shape(m, "adamw_step")?;
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;
    for i in 0..params.len() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (m, g) in m.iter_mut().zip(g) {
            *m = b1 * *m + (1.0 - b1) * g;
        }
        let v = state.v[i].data_mut();
        for (v, g) in v.iter_mut().zip(g) {
            *v = b2 * *v + (1.0 - b2) * g * g;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((p, m), v) in params[i].data_mut().iter_mut().zip(m).zip(v) {
            let update = (m / c1) / ((v / c2).sqrt() + state.eps);
            *p = *p * decay - state.lr * update;
        }
    }
    Ok(())
}

/// Step schedule that halves the base rate at each milestone.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<u64>,
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        let halvings = self.milestones.iter().filter(|&&m| step >= m).count();
        self.base * 0.5f64.powi(halvings as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixpoint() {
        let mut p = vec![Tensor::from_vec(vec![1.0, -2.0])];
        let mut st = OptimState::new(&p, 0.1);
        adamw_step(&mut p, &[Tensor::zeros(&[2])], &mut st).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(0.5)];
        let mut st = OptimState::new(&p, 0.1);
        adamw_step(&mut p, &[Tensor::scalar(1.0)], &mut st).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε)
        let expected = 0.5 - 0.1 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let mut p = vec![Tensor::scalar(2.0)];
        let mut st = OptimState::new(&p, 0.1).with_weight_decay(0.01);
        adamw_step(&mut p, &[Tensor::scalar(0.0)], &mut st).unwrap();
        assert!((p[0].item() - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_betas_and_shapes() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut st = OptimState::new(&p, 0.1);
        st.beta1 = 1.0;
        assert!(adamw_step(&mut p, &[Tensor::scalar(1.0)], &mut st).is_err());
        let mut st = OptimState::new(&p, 0.1);
        assert!(adamw_step(&mut p, &[Tensor::zeros(&[2])], &mut st).is_err());
    }

    #[test]
    fn schedule_halves() {
        let s = LrSchedule {
            base: 2e-4,
            milestones: vec![10, 20],
        };
        assert_eq!(s.at(0), 2e-4);
        assert_eq!(s.at(10), 1e-4);
        assert_eq!(s.at(25), 5e-5);
    }
}
