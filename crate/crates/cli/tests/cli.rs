use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cmsbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmsbm"))
        .args(args)
        .env_remove("CMSBM_THREADS")
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn threshold_reports_fig4_value() {
    let out = cmsbm(&["threshold", "--params", s(&fixture("fig4_l3.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["F_intro"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(v["feasible_detection"], false);
    for k in ["F_sec3", "sigma_plus", "chi2_surrogate_t0"] {
        assert!(v[k].is_number(), "{k}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cmsbm(&["--bogus"]).status.code(), Some(1));
    assert_eq!(cmsbm(&["threshold"]).status.code(), Some(1));
    assert_eq!(cmsbm(&["--help"]).status.code(), Some(0));
    let bad = cmsbm(&["threshold", "--params", "/nonexistent.json"]);
    assert_eq!(bad.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("Io") && msg.contains("hint:"), "{msg}");
    let zero = Command::new(env!("CARGO_BIN_EXE_cmsbm"))
        .args(["threshold", "--params", s(&fixture("fig4_l3.json"))])
        .env("CMSBM_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(zero.status.code(), Some(1));
}

#[test]
fn families_csv_header() {
    let out = cmsbm(&["families", "--params", s(&fixture("fig4_l3.json")), "--aleph", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("topology,canonical_word,aut,dif0,dif,c0,c1,c2,xi"));
    assert_eq!(lines.next().unwrap().split(',').next(), Some("cycle"));
    assert_eq!(cmsbm(&["families", "--params", s(&fixture("fig4_l3.json")), "--aleph", "2"]).status.code(), Some(1));
}

#[test]
fn sample_detect_recover_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs");
    let out = cmsbm(&["sample", "--params", s(&fixture("fig4_l3.json")), "--seed", "4", "--out", s(&obs)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(obs.join("Y.bin").exists() && obs.join("layer_1.csv").exists());

    let det = json(&cmsbm(&["detect", "--obs", s(&obs), "--aleph", "3", "--c", "0.5"]));
    let (beta, tau) = (det["beta"].as_f64().unwrap(), det["tau"].as_f64().unwrap());
    assert!((tau - 0.5 * beta.sqrt()).abs() < 1e-12);
    assert_eq!(det["decision"].as_bool().unwrap(), det["value"].as_f64().unwrap() >= tau);

    let rec = dir.path().join("rec");
    let out = cmsbm(&["recover", "--obs", s(&obs), "--aleph", "3", "--out", s(&rec), "--floor", "0.02", "--round-seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let phi = std::fs::read(rec.join("phi.bin")).unwrap();
    assert_eq!(&phi[..4], b"CMSP");
    assert_eq!(phi.len(), 16 + 8 * 200 * 200);
    let hat = std::fs::read(rec.join("phi_hat.bin")).unwrap();
    assert_eq!(&hat[..4], b"CMSP");
    let diag: Value = serde_json::from_str(&std::fs::read_to_string(rec.join("diagnostics.json")).unwrap()).unwrap();
    assert!(diag["diagnostics"]["constraint_slack"].as_f64().unwrap() >= -1e-8);
    assert_eq!(diag["x_hat"].as_array().unwrap().len(), 200);
    assert!(diag["overlap"].is_number());
}

#[test]
fn exact_backend_over_budget_fails_cleanly() {
    let out = cmsbm(&[
        "detect", "--params", s(&fixture("fig4_l3.json")), "--backend", "exact", "--aleph", "5", "--budget", "1000",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BudgetExceeded"));
}

#[test]
fn experiment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmsbm(&["--threads", "2", "experiment", "--plan", s(&fixture("tiny_plan.toml")), "--out", s(dir.path()), "--plots"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(json(&out)["arms"].is_array());
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("#cmsbm-csv-v1\narm,hypothesis,seed,variant,value,"));
    assert!(dir.path().join("roc_arm0.svg").exists());
}

#[test]
fn verify_passes_on_healthy_build() {
    let out = cmsbm(&["verify", "--seeds", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["passed"], true);
}
