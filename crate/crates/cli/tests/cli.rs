//! End-to-end CLI checks: exit codes, output layout, reproducibility.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_score-mi"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path
}

const TINY: &str = r#"
[channel]
n = 2
prior = "gaussian_iso"

[grid]
t_min = 0.1
t_max = 10.0
points = 3

[train]
iterations = 4
batch_size = 64
hidden = [16]
seed = 5

[fisher]
mc_samples = 1000
"#;

#[test]
fn estimate_succeeds_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let status = bin()
        .args(["estimate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let runs: Vec<_> = fs::read_dir(out.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run_dir = runs[0].as_ref().unwrap().path().join("estimate");
    let csv = fs::read_to_string(run_dir.join("curve.csv")).unwrap();
    assert!(csv.starts_with(
        "t,j_hat,j_se,j_ref,mmse_hat,mi_hat,mi_ref,mi_rel_err,kde_mi,mi_hat_per_n,mi_ref_per_n\n"
    ));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn missing_config_file_is_io_error() {
    let status = bin()
        .args(["estimate", "--config", "/nonexistent/exp.toml"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn invalid_config_is_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}\n[unknown_section]\nx = 1\n"));
    let out = bin()
        .args(["estimate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("unknown_section"), "{msg}");
}

#[test]
fn validate_without_oracle_is_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let body = TINY.replace("prior = \"gaussian_iso\"", "prior = \"gaussian_iso\"\nfrontend = \"tanh_linear\"");
    let cfg = write_config(dir.path(), &body);
    let out = bin()
        .args(["validate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("estimate"));
}

#[test]
fn identical_config_and_seed_reproduce_curve_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let find_csv = |root: &Path| {
        let runs: Vec<_> = fs::read_dir(root.join("runs")).unwrap().collect();
        runs[0].as_ref().unwrap().path().join("estimate/curve.csv")
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args(["estimate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read(find_csv(&out_a)).unwrap();
    let b = fs::read(find_csv(&out_b)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    for seed in ["5", "6"] {
        let status = bin()
            .args(["estimate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
    }
    // two distinct content-addressed run directories
    assert_eq!(fs::read_dir(out.join("runs")).unwrap().count(), 2);
}

#[test]
fn fisher_subcommand_leaves_mi_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let status = bin()
        .args(["fisher", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let runs: Vec<_> = fs::read_dir(out.join("runs")).unwrap().collect();
    let csv = fs::read_to_string(runs[0].as_ref().unwrap().path().join("fisher/curve.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert!(!cols[1].is_empty(), "j_hat present");
        assert!(cols[5].is_empty(), "mi_hat empty");
    }
}
