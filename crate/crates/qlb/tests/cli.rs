//! End-to-end runs of the `qlb` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qlb(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qlb"));
    cmd.args(args);
    if let Some(n) = threads {
        cmd.env("QLB_THREADS", n);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let out = qlb(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["scattering", "kernels", "simulate", "diffusion", "fiber", "scan"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    let out = qlb(&["--version"], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn unknown_key_is_a_config_error_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[params]\nlambda = 0.1\nmass = 3.0\n");
    let out = qlb(&["--config", &cfg, "scattering"], None);
    assert_eq!(out.status.code(), Some(1));
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is a JSON record");
    assert_eq!(rec["kind"], "config");
    assert_eq!(rec["exit_code"], 1);
    let msg = rec["message"].as_str().unwrap();
    assert!(msg.contains("mass") && msg.contains("line 3"), "{msg}");
}

#[test]
fn invalid_flag_value_is_rejected() {
    let out = qlb(&["--eta", "0", "scan"], None);
    assert_eq!(out.status.code(), Some(1));
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(rec["message"].as_str().unwrap().contains("eta"));
}

#[test]
fn scattering_run_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scattering]\nkappas = [0.5, 100.0]\nn_theta = 7\n");
    let out_dir = dir.path().join("out");
    let out = qlb(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "scattering"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let checksum = manifest["checksum"].as_str().unwrap();
    assert_eq!(checksum.len(), 64);
    let csv = fs::read_to_string(out_dir.join("cross_sections.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# qlb "));
    assert_eq!(lines.next().unwrap(), format!("# manifest-sha256: {checksum}"));
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 3, "header plus one row per κ");
}

#[test]
fn simulate_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[simulate]\nn_traj = 3\nt_total = 300.0\nn_lags = 20\n");
    let mut files = Vec::new();
    for (i, threads) in [Some("1"), None].into_iter().enumerate() {
        let out_dir = dir.path().join(format!("out{i}"));
        let out = qlb(&["--config", &cfg, "--seed", "9", "--out", out_dir.to_str().unwrap(), "simulate"], threads);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files.push((fs::read(out_dir.join("vacf.csv")).unwrap(), fs::read(out_dir.join("trajectories.csv")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let out = qlb(&["scan"], Some("zero"));
    assert_eq!(out.status.code(), Some(1));
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(rec["message"].as_str().unwrap().contains("QLB_THREADS"));
}
