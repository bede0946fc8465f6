use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lr2flow_cli::{run_cli, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lr2flow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Diagonal ramp, 8-bit P5.
fn write_pgm(path: &Path, side: usize) {
    let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
    bytes.extend((0..side * side).map(|k| ((k / side + k % side) * 4 % 256) as u8));
    fs::write(path, bytes).unwrap();
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const TINY_TRAIN: &str = "steps = 3\nbatch = 2\ntrain_count = 8\nval_count = 2\nval_every = 1\nblocks = 1\nhidden = 8\n";

#[test]
fn transform_writes_subbands_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("ramp.pgm");
    write_pgm(&img, 32);
    let cfg = write_config(dir.path(), "c.cfg", "bank = haar\nlevels = 1\n");
    let out = dir.path().join("d");
    let code = run_cli(["lr2flow", "transform", "--config", s(&cfg), "--input", s(&img), "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let level = out.join("level_1");
    assert!(level.join("subband_00.lrtf").is_file());
    // 2-D haar: one low and three high subbands
    assert!(level.join("subband_03.lrtf").is_file());
    assert!(!level.join("subband_04.lrtf").exists());
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config_sha256 = "));
    assert!(manifest.contains("version = "));
    assert!(manifest.contains("rng = chacha8"));
}

#[test]
fn config_errors_exit_one_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let unknown = write_config(dir.path(), "u.cfg", "seed = 1\nwidths = 64\n");
    let o = bin(&["train", "--config", s(&unknown), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("'widths'"));
    let dup = write_config(dir.path(), "d.cfg", "seed = 1\nsteps = 2\nsteps = 3\n");
    let o = bin(&["train", "--config", s(&dup), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate key 'steps'"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(run_cli(["lr2flow", "frobnicate"]), EXIT_USAGE);
    // no seed anywhere
    assert_eq!(run_cli(["lr2flow", "train", "--out", s(&out)]), EXIT_USAGE);
    assert!(!out.exists());
    // no output directory
    assert_eq!(run_cli(["lr2flow", "train", "--seed", "1"]), EXIT_USAGE);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let missing = dir.path().join("nope.pgm");
    assert_eq!(run_cli(["lr2flow", "transform", "--input", s(&missing), "--out", s(&out)]), EXIT_RUNTIME);
}

#[test]
fn train_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", TINY_TRAIN);
    let mut logs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let code = run_cli(["lr2flow", "train", "--config", s(&cfg), "--seed", "11", "--out", s(&out)]);
        assert_eq!(code, EXIT_OK);
        let model = out.join("model");
        let mut files: Vec<_> = fs::read_dir(&model).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        let blobs: Vec<Vec<u8>> = files.iter().filter(|p| p.is_file()).map(|p| fs::read(p).unwrap()).collect();
        logs.push((fs::read(out.join("train_log.csv")).unwrap(), blobs));
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(String::from_utf8_lossy(&logs[0].0).lines().count(), 4);
}

#[test]
fn eval_compress_and_denoise_run_on_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("ramp.pgm");
    write_pgm(&img, 32);
    let cfg = write_config(dir.path(), "c.cfg", &format!("{TINY_TRAIN}task = denoise\nhead_hidden = 8\n"));
    let train_out = dir.path().join("train");
    assert_eq!(run_cli(["lr2flow", "train", "--config", s(&cfg), "--seed", "2", "--out", s(&train_out)]), EXIT_OK);
    let model = train_out.join("model");
    assert!(model.join("head").join("head.txt").is_file());

    let ev = dir.path().join("eval");
    assert_eq!(
        run_cli(["lr2flow", "eval", "--seed", "2", "--model", s(&model), "--input", s(&img), "--out", s(&ev)]),
        EXIT_OK
    );
    let csv = fs::read_to_string(ev.join("eval.csv")).unwrap();
    assert!(csv.starts_with("image,tiles,mse,psnr,ssim,psnr_bicubic,z_energy\nramp.pgm,4,"));

    let cp = dir.path().join("compress");
    assert_eq!(
        run_cli(["lr2flow", "compress", "--seed", "2", "--qf", "60", "--model", s(&model), "--input", s(&img), "--out", s(&cp)]),
        EXIT_OK
    );
    assert!(cp.join("ramp_lr.pgm").is_file() && cp.join("ramp_recon.pgm").is_file());
    assert_eq!(
        run_cli(["lr2flow", "compress", "--seed", "2", "--qf", "0", "--model", s(&model), "--input", s(&img), "--out", s(&cp)]),
        EXIT_USAGE
    );

    let dn = dir.path().join("denoise");
    assert_eq!(
        run_cli(["lr2flow", "denoise", "--seed", "2", "--model", s(&model), "--input", s(&img), "--out", s(&dn)]),
        EXIT_OK
    );
    assert!(fs::read_to_string(dn.join("denoise.csv")).unwrap().lines().count() == 2);
}

#[test]
fn verify_theory_quick_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = bin(&["verify-theory", "--quick", "--seed", "7", "--out", s(&out)]);
    let code = o.status.code().unwrap();
    assert!(code == EXIT_OK || code == EXIT_RUNTIME);
    let csv = fs::read_to_string(out.join("bound_reports.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "quantity,relation,analytic,empirical,samples,tolerance,pass");
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() > 20);
    let failed = rows.iter().filter(|r| r.ends_with(",false")).count();
    assert_eq!(code == EXIT_OK, failed == 0);
    assert!(out.join("summary.txt").is_file() && out.join("manifest.txt").is_file());
}

#[test]
fn verify_theory_all_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = bin(&["verify-theory", "--seed", "7", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("bound_reports.csv")).unwrap();
    let failed: Vec<&str> = csv.lines().skip(1).filter(|r| r.ends_with(",false")).collect();
    assert!(failed.is_empty(), "failing checks:\n{}", failed.join("\n"));
    assert_eq!(o.status.code(), Some(EXIT_OK));
}
