// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use finsler_quant::harness::DEFAULT_CONFIG;

fn kq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kq"))
        .args(args)
        .env("KQ_THREADS", "1")
        .output()
        .expect("kq runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn geodesic_run_creates_nested_output_and_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a/b/c");
    let b = tmp.path().join("again");
    for out in [&a, &b] {
        let o = kq(&["geodesic", "--default", "--resolution", "64", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["output_dir_created"], true);
    assert_eq!(manifest["failures"].as_array().map(Vec::len), Some(0));
    assert!(manifest["passed"].as_u64().unwrap() > 0);
    for f in ["fd.csv", "geodesic.csv", "geodesic_summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(!a.join("failures.csv").exists());
}

#[test]
fn failed_invariant_exits_two_and_writes_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &DEFAULT_CONFIG.replace("nondegenerate = 1e-3", "nondegenerate = 1e6"));
    let out = tmp.path().join("out");
    let o = kq(&["hym", "--config", &cfg, "--resolution", "64", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let failures = std::fs::read_to_string(out.join("failures.csv")).unwrap();
    assert!(failures.contains("nondegeneracy"), "{failures}");
}

#[test]
fn bad_levels_and_configs_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = kq(&["converge", "--default", "--k", "4,2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let cfg = write_config(tmp.path(), &DEFAULT_CONFIG.replace("strength = 1.0", "strength = -5.0"));
    let o = kq(&["envelope", "--config", &cfg, "--resolution", "64", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let o = kq(&["quantize", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&kq(&["geodesic", "--bogus"])), 1);
    assert_eq!(code(&kq(&["geodesic", "--default", "--config", "x.toml"])), 1);
    assert_eq!(code(&kq(&[])), 1);
}

#[test]
fn certify_reports_every_family() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cert");
    let o = kq(&["certify", "--default", "--k", "2,4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let certs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("certificates.json")).unwrap()).unwrap();
    assert_eq!(certs.as_array().map(|a| a.len()), Some(22));
    assert!(out.join("semiclassical.csv").exists());
}
