use lr2flow::config::RunConfig;
use lr2flow::io::{load_image, save_image, ImageBuffer};
use lr2flow::{Error, Tensor};
use proptest::prelude::*;

#[test]
fn pgm_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.pgm");
    let t = Tensor::from_fn(&[5, 7], |k| (k * 7 % 256) as f64 / 255.0);
    save_image(&path, &ImageBuffer::from_tensor(&t).unwrap()).unwrap();
    let back = load_image(&path).unwrap();
    assert_eq!((back.width, back.height, back.channels), (7, 5, 1));
    assert_eq!(back.to_tensor(), t);
}

#[test]
fn ppm_loads_as_luma() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ppm");
    let mut bytes = b"P6\n2 1\n255\n".to_vec();
    bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
    std::fs::write(&path, bytes).unwrap();
    let t = load_image(&path).unwrap().to_tensor();
    assert_eq!(t.shape(), &[1, 2]);
    assert!((t.data()[0] - 0.299).abs() < 1e-12 && (t.data()[1] - 0.114).abs() < 1e-12);
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_image("/nonexistent/x.pgm"), Err(Error::Io { .. })));
}

#[test]
fn config_errors_carry_line_numbers() {
    let e = RunConfig::parse("# header\nsteps = 10\nsteps = 20\n").unwrap_err();
    assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
    let e = RunConfig::parse("seed = 1\nlearning_rate = 0.1\n").unwrap_err();
    assert!(e.to_string().contains("'learning_rate'"), "{e}");
    let e = RunConfig::parse("batch = many\n").unwrap_err();
    assert!(matches!(e, Error::Config { line: 1, .. }));
}

#[test]
fn seed_is_required_downstream() {
    let cfg = RunConfig::parse("steps = 3\n").unwrap();
    assert!(cfg.train_config().is_err());
    let cfg = RunConfig::parse("steps = 3\nseed = 4\n").unwrap();
    assert_eq!(cfg.train_config().unwrap().seed, 4);
    assert_eq!(cfg.flow_config(&[16, 16]).unwrap().seed, 4);
}

proptest! {
    #[test]
    fn canonical_text_round_trips(
        seed in prop::option::of(any::<u64>()),
        lr in 1e-6f64..1.0,
        steps in 0u64..100_000,
        milestones in prop::collection::vec(1u64..10_000, 0..4),
        sigma in 0.0f64..1.0,
    ) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.lr = lr;
        cfg.steps = steps;
        cfg.milestones = milestones;
        cfg.sigma_n = sigma;
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn quantize_is_stable(values in prop::collection::vec(0.0f64..=1.0, 12)) {
        let img = ImageBuffer::new(4, 3, 1, values).unwrap();
        let q = img.quantize();
        let requant = ImageBuffer::new(4, 3, 1, q.iter().map(|&v| v as f64 / 255.0).collect()).unwrap();
        prop_assert_eq!(requant.quantize(), q);
    }
}
