use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gdid::clustered::ClusterSummary;
use gdid::config::{run_estimate, ClusterOptions, EstimandChoice, EstimateConfig};
use gdid::estimators::estimate_did;
use gdid::panel::{parse_panel_csv, PanelSchema};
use gdid::pipeline::InferenceMethod;
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn gdid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdid")).args(args).output().unwrap()
}

fn json_ok(args: &[&str]) -> Value {
    let out = gdid(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn toy_text() -> String {
    std::fs::read_to_string(data("toy_panel.csv")).unwrap()
}

#[test]
fn estimate_smoke() {
    let toy = data("toy_panel.csv");
    let v = json_ok(&[
        "estimate",
        toy.to_str().unwrap(),
        "--estimand",
        "gdid",
        "--lags",
        "1",
        "--infer",
        "plugin",
    ]);
    assert_eq!(v["estimand"], "gdid");
    for key in ["tau_hat", "se"] {
        assert!(v[key].as_f64().unwrap().is_finite(), "{key}");
    }
    let (lo, hi) = (v["ci"]["lower"].as_f64().unwrap(), v["ci"]["upper"].as_f64().unwrap());
    assert!(lo < v["tau_hat"].as_f64().unwrap() && v["tau_hat"].as_f64().unwrap() < hi);
    assert_eq!(v["n"], 96);
}

#[test]
fn did_matches_library() {
    let toy = data("toy_panel.csv");
    let v = json_ok(&["estimate", toy.to_str().unwrap(), "--estimand", "did"]);
    let ds = parse_panel_csv(&std::fs::read_to_string(&toy).unwrap(), &PanelSchema::default()).unwrap();
    assert_eq!(v["tau_hat"].as_f64().unwrap(), estimate_did(&ds).unwrap().tau_hat);
}

#[test]
fn cluster_bootstrap_matches_library() {
    let toy = data("toy_panel.csv");
    let v = json_ok(&[
        "estimate",
        toy.to_str().unwrap(),
        "--cluster-col",
        "clinic",
        "--infer",
        "bootstrap",
        "--B",
        "1000",
        "--seed",
        "11",
    ]);
    let mut cfg = EstimateConfig {
        estimand: EstimandChoice::Gdid,
        inference: InferenceMethod::Bootstrap,
        cluster: Some(ClusterOptions {
            summary: ClusterSummary::Mean,
            cap: None,
            cap_seed: 11,
        }),
        ..Default::default()
    };
    cfg.schema.cluster = Some("clinic".into());
    cfg.pipeline.bootstrap_b = 1000;
    cfg.pipeline.seed = 11;
    let lib = run_estimate(&cfg, &toy_text()).unwrap();
    assert_eq!(v["estimand"], "clustered_gdid");
    assert_eq!(v["n_clusters"], 16);
    assert_eq!(v["tau_hat"].as_f64().unwrap(), lib.tau_hat);
    assert_eq!(v["se"].as_f64().unwrap(), lib.se);
    assert_eq!(v["ci"]["lower"].as_f64().unwrap(), lib.ci.lower);
    assert_eq!(v["ci"]["upper"].as_f64().unwrap(), lib.ci.upper);
}

#[test]
fn outputs_and_influence_files() {
    let dir = tempfile::tempdir().unwrap();
    let toy = data("toy_panel.csv");
    let out = gdid(&[
        "estimate",
        toy.to_str().unwrap(),
        "--estimand",
        "did",
        "--influence",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let est = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    assert!(est.starts_with("estimand,"));
    let infl = std::fs::read_to_string(dir.path().join("influence.csv")).unwrap();
    assert_eq!(infl.lines().count(), 97);
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let exp = data("dgp1_zeta0.toml");
    let run = |threads: &str| {
        let out = gdid(&[
            "--threads",
            threads,
            "--format",
            "csv",
            "simulate",
            exp.to_str().unwrap(),
            "--reps",
            "4",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("3"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 9, "{text}");
}

#[test]
fn validate_reports_structure() {
    let toy = data("toy_panel.csv");
    let out = gdid(&["validate", toy.to_str().unwrap()]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["structural_errors"].as_array().unwrap().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "unit,time,outcome,treatment\na,0,1,0\na,1,2,0\nb,0,1,1\n").unwrap();
    assert_eq!(gdid(&["validate", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(gdid(&["estimate", "/nonexistent.csv"]).status.code(), Some(2));
    let toy = data("toy_panel.csv");
    let out = gdid(&["estimate", toy.to_str().unwrap(), "--trim-eps", "0.7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trim_eps"));

    // one control unit cannot be split across two folds
    let dir = tempfile::tempdir().unwrap();
    let thin = dir.path().join("thin.csv");
    let mut csv = String::from("unit,time,outcome,treatment,cov_x\n");
    for i in 0..8 {
        let a = u8::from(i > 0);
        for t in [-1, 0, 1] {
            csv.push_str(&format!("u{i},{t},{},{a},{}\n", i + t, i % 3));
        }
    }
    std::fs::write(&thin, csv).unwrap();
    let out = gdid(&["estimate", thin.to_str().unwrap(), "--lags", "0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sandwich_needs_parametric_fits() {
    let toy = data("toy_panel.csv");
    let out = gdid(&["estimate", toy.to_str().unwrap(), "--infer", "sandwich"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json_ok(&[
        "estimate",
        toy.to_str().unwrap(),
        "--infer",
        "sandwich",
        "--learner",
        "parametric",
    ]);
    assert_eq!(v["variance"]["method"], "sandwich");
}
