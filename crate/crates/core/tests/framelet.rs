use lr2flow::framelet::{analyze, make_bank, multi_level_analyze, multi_level_synthesize, synthesize, BankKind, Coefficients};
use lr2flow::Tensor;
use proptest::prelude::*;

fn bank_kind() -> impl Strategy<Value = BankKind> {
    prop::sample::select(BankKind::ALL.to_vec())
}

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

fn energy(c: &Coefficients) -> f64 {
    c.subbands().map(Tensor::norm_sq).sum()
}

fn inner(a: &Coefficients, b: &Coefficients) -> f64 {
    a.subbands().zip(b.subbands()).map(|(x, y)| x.dot(y).unwrap()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perfect_reconstruction_1d(kind in bank_kind(), exp in 3u32..7, seed in any::<u64>()) {
        let n = 1usize << exp;
        let x = Tensor::from_fn(&[n], |i| ((i as u64).wrapping_mul(seed | 1) % 97) as f64 / 48.0 - 1.0);
        let bank = make_bank(kind);
        let back = synthesize(&analyze(&x, &bank, 1).unwrap(), &bank, 1).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn parseval_2d(kind in bank_kind(), data in signal(64)) {
        let x = Tensor::new(vec![8, 8], data).unwrap();
        let c = analyze(&x, &make_bank(kind), 2).unwrap();
        prop_assert!((energy(&c) - x.norm_sq()).abs() < 1e-10 * x.norm_sq().max(1.0));
    }

    #[test]
    fn synthesis_is_the_adjoint(kind in bank_kind(), a in signal(64), b in signal(64)) {
        let bank = make_bank(kind);
        let x = Tensor::new(vec![8, 8], a).unwrap();
        let shape = analyze(&x, &bank, 2).unwrap();
        let mut it = b.into_iter().cycle();
        let c = Coefficients {
            low: Tensor::from_fn(shape.low.shape(), |_| it.next().unwrap()),
            high: shape.high.iter().map(|h| Tensor::from_fn(h.shape(), |_| it.next().unwrap())).collect(),
            level: shape.level,
        };
        let lhs = inner(&analyze(&x, &bank, 2).unwrap(), &c);
        let rhs = x.dot(&synthesize(&c, &bank, 2).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn multi_level_round_trip(kind in bank_kind(), levels in 1usize..4, data in signal(256)) {
        let bank = make_bank(kind);
        let x = Tensor::new(vec![16, 16], data).unwrap();
        let pyramid = multi_level_analyze(&x, &bank, 2, levels).unwrap();
        prop_assert_eq!(pyramid.len(), levels);
        let side = 16 >> levels;
        prop_assert_eq!(pyramid.last().unwrap().low.shape(), &[side, side]);
        let back = multi_level_synthesize(&pyramid, &bank, 2).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }
}

#[test]
fn subband_counts() {
    let x = Tensor::zeros(&[8, 8]);
    for (kind, high) in [(BankKind::LinearBspline, 8), (BankKind::Haar, 3), (BankKind::PixelUnshuffle, 3)] {
        let c = analyze(&x, &make_bank(kind), 2).unwrap();
        assert_eq!(c.high.len(), high, "{kind}");
        assert_eq!(c.low.shape(), &[4, 4]);
    }
}

#[test]
fn odd_length_is_rejected() {
    let x = Tensor::zeros(&[7]);
    assert!(analyze(&x, &make_bank(BankKind::Haar), 1).is_err());
}
