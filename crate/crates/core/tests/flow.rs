use lr2flow::flow::{BlockKind, FlowConfig, FlowModel};
use lr2flow::framelet::BankKind;
use lr2flow::rng::NormalSampler;
use lr2flow::Tensor;
use proptest::prelude::*;

fn model(bank: BankKind, levels: usize, blocks: usize, kind: BlockKind, seed: u64) -> FlowModel {
    let mut m = FlowModel::new(FlowConfig::new(bank, &[16, 16], levels, blocks, kind).with_hidden(16).with_seed(seed)).unwrap();
    m.randomize(seed, 0.5);
    m
}

fn input(seed: u64) -> Tensor {
    let mut rng = NormalSampler::new(seed, 9);
    Tensor::from_fn(&[16, 16], |_| rng.sample())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coupling_flows_invert(
        bank in prop::sample::select(BankKind::ALL.to_vec()),
        levels in 1usize..3,
        blocks in 1usize..4,
        seed in any::<u64>(),
    ) {
        let m = model(bank, levels, blocks, BlockKind::Coupling, seed);
        let x = input(seed);
        let (y, zs) = m.forward(&x).unwrap();
        prop_assert!(m.inverse(&y, &zs).unwrap().max_abs_diff(&x).unwrap() < 1e-9);
    }

    #[test]
    fn residual_flows_invert_within_budget(levels in 1usize..3, seed in any::<u64>()) {
        let m = model(BankKind::Haar, levels, 2, BlockKind::IRes, seed);
        let x = input(seed);
        let (y, zs) = m.forward(&x).unwrap();
        let (back, certs) = m.inverse_certified(&y, &zs).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-8);
        prop_assert!(certs.iter().all(|c| c.iterations <= 200 && c.residual <= 1e-10));
    }
}

#[test]
fn shapes_follow_the_pyramid() {
    let m = model(BankKind::LinearBspline, 2, 1, BlockKind::Coupling, 1);
    assert_eq!(m.y_shape(), &[4, 4]);
    // 8 high subbands per level for the redundant bank
    assert_eq!(m.z_shapes(), vec![vec![8, 64], vec![8, 16]]);
    let (y, zs) = m.forward(&input(1)).unwrap();
    assert_eq!(y.shape(), &[4, 4]);
    assert_eq!(zs.len(), 2);
}

#[test]
fn residual_blocks_respect_the_lipschitz_budget() {
    let m = model(BankKind::Haar, 1, 3, BlockKind::IRes, 4);
    m.check_invariants().unwrap();
}

#[test]
fn save_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(BankKind::Haar, 2, 2, BlockKind::Coupling, 3);
    m.save(dir.path()).unwrap();
    let back = FlowModel::load(dir.path()).unwrap();
    let x = input(3);
    assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
    assert_eq!(m.params().values(), back.params().values());
}

#[test]
fn forward_is_deterministic() {
    let a = model(BankKind::LinearBspline, 1, 2, BlockKind::Coupling, 8);
    let b = model(BankKind::LinearBspline, 1, 2, BlockKind::Coupling, 8);
    let x = input(2);
    assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let m = model(BankKind::Haar, 1, 1, BlockKind::Coupling, 0);
    assert!(m.forward(&Tensor::zeros(&[8, 8])).is_err());
}
