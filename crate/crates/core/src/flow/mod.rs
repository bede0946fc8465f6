//! Invertible blocks on framelet coefficients and the hierarchical flow built from them.
//!
//! Coefficients travel as `[C, P]` matrices: `C` subbands (low first), `P`
//! coefficients per subband.

mod blocks;
mod mlp;
mod model;
mod params;

pub use blocks::{
    power_iteration, ActNorm, BlockKind, Coupling, IResBlock, InversionCertificate, Inv1x1, POWER_ITERATIONS,
};
pub use mlp::Mlp;
pub use model::{FlowBlock, FlowConfig, FlowModel, LevelGeometry, Nonlinearity};
pub use params::{ParamId, ParamSet};

use crate::error::Result;
use crate::tensor::Tensor;

/// `(y, [z^(1), …, z^(T)])`.
pub fn flow_forward(model: &FlowModel, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    model.forward(x)
}

pub fn flow_inverse(model: &FlowModel, y: &Tensor, zs: &[Tensor]) -> Result<Tensor> {
    model.inverse(y, zs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::NormalSampler;
    use crate::tape::Tape;

    fn mat(c: usize, p: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![c, p], v.to_vec()).unwrap()
    }

    #[test]
    fn actnorm_examples() {
        let mut ps = ParamSet::new();
        let an = ActNorm::new(&mut ps, "an", 3);
        let c = mat(3, 2, &[1.0, 1.0, 0.5, -0.5, 2.0, 0.0]);
        let tape = Tape::new();
        let p = ps.bind_const(&tape);
        let cv = tape.constant(c.clone());
        assert_eq!(tape.value(an.forward(&tape, &p, cv).unwrap()), c);

        *ps.get_mut(an.log_scale) = Tensor::from_vec(vec![2f64.ln(), 3f64.ln(), 4f64.ln()]);
        *ps.get_mut(an.bias) = Tensor::from_vec(vec![1.0; 3]);
        let tape = Tape::new();
        let p = ps.bind_const(&tape);
        let cv = tape.constant(c.clone());
        let out = an.forward(&tape, &p, cv).unwrap();
        let o = tape.value(out);
        assert!((o.data()[0] - 3.0).abs() < 1e-15 && (o.data()[1] - 3.0).abs() < 1e-15);
        let back = tape.value(an.inverse(&tape, &p, out).unwrap());
        assert!(back.max_abs_diff(&c).unwrap() < 1e-12);
    }

    #[test]
    fn cayley_quarter_turn() {
        let mut ps = ParamSet::new();
        let mix = Inv1x1::new(&mut ps, "k", 2);
        assert_eq!(mix.k_matrix(&ps).unwrap(), Tensor::eye(2));
        *ps.get_mut(mix.raw) = mat(2, 2, &[0.0, 0.5, -0.5, 0.0]);
        let k = mix.k_matrix(&ps).unwrap();
        let expected = mat(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(k.max_abs_diff(&expected).unwrap() < 1e-15);

        let tape = Tape::new();
        let p = ps.bind_const(&tape);
        let c = tape.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let out = tape.value(mix.forward(&tape, &p, c).unwrap());
        assert!(out.max_abs_diff(&mat(2, 2, &[-3.0, -4.0, 1.0, 2.0])).unwrap() < 1e-15);
    }

    #[test]
    fn coupling_shift_only() {
        let mut ps = ParamSet::new();
        let mut init = NormalSampler::new(0, 0);
        let cp = Coupling::new(&mut ps, "c", 3, 2, 8, 2.0, &mut init);
        let (_, eta_b) = *cp.eta.layers.last().unwrap();
        *ps.get_mut(eta_b) = Tensor::from_vec(vec![0.25; 4]);
        let c = mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let tape = Tape::new();
        let p = ps.bind_const(&tape);
        let cv = tape.constant(c.clone());
        let fwd = cp.forward(&tape, &p, cv).unwrap();
        let f = tape.value(fwd);
        assert_eq!(&f.data()[..2], &[1.0, 2.0]);
        assert_eq!(&f.data()[2..], &[3.25, 4.25, 5.25, 6.25]);
        let back = tape.value(cp.inverse(&tape, &p, fwd).unwrap());
        assert_eq!(back, c);
    }

    fn toy_ires(ps: &mut ParamSet) -> IResBlock {
        let mut init = NormalSampler::new(0, 0);
        let g = IResBlock::with_sizes(ps, "r", &[1, 1, 1], 0.9, &mut init);
        *ps.get_mut(g.phi.layers[0].0) = mat(1, 1, &[1.0]);
        *ps.get_mut(g.phi.layers[1].0) = mat(1, 1, &[0.5]);
        g
    }

    #[test]
    fn ires_toy_forward_and_inverse() {
        let mut ps = ParamSet::new();
        let g = toy_ires(&mut ps);
        let tape = Tape::new();
        let p = ps.bind_const(&tape);
        let at = |v: f64| {
            let x = tape.constant(mat(1, 1, &[v]));
            tape.value(g.forward(&tape, &p, x).unwrap()).item()
        };
        assert_eq!(at(0.0), 0.0);
        let y1 = at(1.0);
        assert!((y1 - (1.0 + 0.5 * 1f64.tanh())).abs() < 1e-15);
        assert!((y1 - 1.38079).abs() < 1e-5);

        let yv = tape.constant(mat(1, 1, &[y1]));
        let (x, cert) = g.inverse(&tape, &p, yv, 1e-10, 200).unwrap();
        assert!((tape.value(x).item() - 1.0).abs() < 1e-8);
        assert!(cert.residual < 1e-10);
    }

    #[test]
    fn zero_residual_inverts_in_one_step() {
        let mut ps = ParamSet::new();
        let mut init = NormalSampler::new(0, 0);
        let g = IResBlock::new(&mut ps, "r", 4, 8, 0.9, &mut init);
        let tape = Tape::new();
        let p = ps.bind_const(&tape);
        let y = tape.constant(mat(2, 2, &[0.3, -1.0, 2.0, 0.0]));
        let (x, cert) = g.inverse(&tape, &p, y, 1e-10, 200).unwrap();
        assert_eq!(cert.iterations, 1);
        assert_eq!(tape.value(x), tape.value(y));
    }

    #[test]
    fn expansive_residual_fails_to_converge() {
        let mut ps = ParamSet::new();
        let g = toy_ires(&mut ps);
        *ps.get_mut(g.phi.layers[1].0) = mat(1, 1, &[3.0]);
        let tape = Tape::new();
        let p = ps.bind_const(&tape);
        let y = tape.constant(mat(1, 1, &[1.0]));
        let err = g.inverse(&tape, &p, y, 1e-10, 50).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 50, .. }));
    }

    #[test]
    fn spectral_normalize_examples() {
        let mut ps = ParamSet::new();
        let mut init = NormalSampler::new(0, 0);
        let mut g = IResBlock::with_sizes(&mut ps, "r", &[3, 3], 0.9, &mut init);
        let w = g.phi.layers[0].0;
        *ps.get_mut(w) = Tensor::eye(3).scale(2.0);
        g.spectral_normalize(&mut ps);
        assert!(ps.get(w).max_abs_diff(&Tensor::eye(3).scale(0.9)).unwrap() < 1e-12);

        let small = Tensor::eye(3).scale(0.1);
        *ps.get_mut(w) = small.clone();
        g.spectral_normalize(&mut ps);
        assert_eq!(ps.get(w), &small);
    }
}
