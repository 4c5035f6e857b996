use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use liquidation_lab::config::ModelConfig;
use liquidation_lab::families::{no_jump, two_regime_jump};
use serde_json::Value;

fn liqlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liqlab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, model: &liquidation_core::model::MarketModel) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, ModelConfig::from_model(model).to_json()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_one_csv_per_level_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", &two_regime_jump(1.0).unwrap());
    let out = dir.path().join("out");
    let o = liqlab(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--L", "1,2,4,8"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for l in ["1", "2", "4", "8"] {
        let csv = std::fs::read_to_string(out.join(format!("truncated_L{l}.csv"))).unwrap();
        assert!(csv.starts_with(&format!("# L={l}.0,c_check=")));
        assert_eq!(csv.lines().nth(1), Some("t,Y_0,Y_1"));
        assert_eq!(csv.lines().count(), 2 + 4097 + 2, "grid has breakpoint and cut-off nodes merged in");
    }
    let manifest = read_json(&out.join("manifest_solve.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["params"]["steps"], 4096);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 5);
}

#[test]
fn verify_on_the_no_jump_family_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "single_regime.json", &no_jump(1.0, 1.0, 1.0).unwrap());
    let out = dir.path().join("out");
    let o = liqlab(&["verify", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--paths", "200"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    let summary = read_json(&out.join("verify.json"));
    assert_eq!(summary["verdict"], "PASS");
    let names: Vec<&str> = summary["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"truncated_closed_form"));
    assert!(names.contains(&"liquidation_profile"));

    let o = liqlab(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["verdict"], "PASS");
    assert!(std::fs::read_to_string(out.join("report.md")).unwrap().contains("verify.json"));
}

#[test]
fn failing_verdict_exits_with_two() {
    // eight steps cannot meet the closed-form tolerance
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "single_regime.json", &no_jump(1.0, 1.0, 1.0).unwrap());
    let out = dir.path().join("out");
    let o = liqlab(&[
        "verify", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--paths", "50", "--steps", "8",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(read_json(&out.join("verify.json"))["verdict"], "FAIL");
    assert!(out.join("manifest_verify.json").exists());
}

#[test]
fn invalid_config_exits_with_one_and_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"regimes": [[-1, 2], [1, -1]], "horizon": 1, "x0": 1, "eta": [[1], [1]], "lambda": [[0], [0]]}"#)
        .unwrap();
    let o = liqlab(&["solve", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["code"], "RowSumNonzero");
    assert!(err["context"].as_str().unwrap().starts_with("solve"));

    let o = liqlab(&["simulate", "--config", "/nonexistent/model.json", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["code"], "IoError");

    let o = liqlab(&["simulate", "--config", config.to_str().unwrap(), "--paths", "1", "--L", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = liqlab(&["bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_penalized_reports_and_dumps_paths() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", &no_jump(1.0, 1.0, 1.0).unwrap());
    let out = dir.path().join("out");
    let o = liqlab(&[
        "simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--L", "1", "--paths", "10",
        "--dump-paths",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("mc_report.json"));
    assert_eq!(report["n_paths"], 10);
    assert!((report["estimate"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!(report["tail_bound"].is_null());
    let dumped = std::fs::read_dir(out.join("paths")).unwrap().count();
    assert_eq!(dumped, 10);
    let path = std::fs::read_to_string(out.join("paths/path_0.csv")).unwrap();
    assert_eq!(path.lines().next(), Some("t,X,xi,regime,cost"));
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", &two_regime_jump(1.0).unwrap());
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = liqlab(&[
            "simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--paths", "2000",
            "--seed", "42", "--steps", "1024",
        ]);
        assert!(matches!(o.status.code(), Some(0 | 2)));
        reports.push(std::fs::read(out.join("mc_report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}
