//! The command-line examples, run against the built binary.

use std::path::{Path, PathBuf};
use std::process::Command;

struct Run {
    code: i32,
    out: PathBuf,
    _dir: tempfile::TempDir,
}

fn run(cmd: &str, config: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_leafdecomp"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    Run {
        code: status.code().unwrap_or(-1),
        out,
        _dir: dir,
    }
}

/// Data rows of a CSV written by the tool (header lines skipped).
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let head = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (head, rows)
}

#[test]
fn classify_cylinder_grid() {
    let r = run(
        "classify",
        r#"{"map": {"map": "cylindrical"},
            "classify": {"samples": {"kind": "grid", "lo": [-2,-2,-2], "hi": [2,2,2], "count": 32}}}"#,
    );
    assert_eq!(r.code, 0);
    let path = r.out.join("classify.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# tool=leafdecomp"));
    assert!(text.contains("config_sha256="));
    let (head, rows) = csv_rows(&path);
    assert_eq!(
        head,
        ["x1", "x2", "x3", "leaf_dim", "interior", "alpha1", "alpha2", "beta1", "beta2", "excluded"]
    );
    assert_eq!(rows.len(), 32 * 32 * 32);
    let kept: Vec<_> = rows.iter().filter(|row| row[9] == "false").collect();
    let dim2 = kept.iter().filter(|row| row[3] == "2").count();
    assert!(dim2 as f64 >= 0.99 * kept.len() as f64, "{dim2}/{}", kept.len());
}

#[test]
fn classify_identity_is_full_dimensional() {
    let r = run(
        "classify",
        r#"{"map": {"map": "identity", "n": 2},
            "classify": {"samples": {"kind": "random", "lo": [-1,-1], "hi": [1,1], "count": 50}}}"#,
    );
    assert_eq!(r.code, 0);
    let (_, rows) = csv_rows(&r.out.join("classify.csv"));
    assert!(rows.iter().all(|row| row[2] == "2" && row[3] == "true"));
}

#[test]
fn classify_empty_samples_is_a_config_error() {
    let r = run(
        "classify",
        r#"{"map": {"map": "identity", "n": 2}, "classify": {"samples": {"kind": "points", "points": []}}}"#,
    );
    assert_eq!(r.code, 2);
}

#[test]
fn disintegrate_projection_gaussian() {
    let r = run(
        "disintegrate",
        r#"{"map": {"map": "projection", "n": 3, "m": 2}, "measure": {"rho": "gaussian"},
            "disintegrate": {"region": {"region": "ball", "center": [0,0,0], "radius": 1}}}"#,
    );
    assert_eq!(r.code, 0);
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(r.out.join("mixture.json")).unwrap()).unwrap();
    assert_eq!(doc["header"]["tool"], "leafdecomp");
    assert!(doc["result"]["report"]["rel_err"].as_f64().unwrap() <= 0.02);
    assert_eq!(doc["result"]["pass"], true);
    let (head, rows) = csv_rows(&r.out.join("densities.csv"));
    assert_eq!(head, ["chart", "piece", "a1", "b1", "b2", "density"]);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|row| row[5].parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn disintegrate_axis_is_a_coverage_gap() {
    let r = run(
        "disintegrate",
        r#"{"map": {"map": "cylindrical"}, "measure": {"rho": "gaussian"},
            "disintegrate": {"region": {"region": "box", "lo": [-1,-1,-1], "hi": [1,1,1]},
                             "mixture": {"max_uncovered": 0.0, "n_direct": 4096, "n_outer": 16, "n_inner": 256}}}"#,
    );
    assert_eq!(r.code, 1);
}

#[test]
fn disintegrate_malformed_json() {
    let r = run("disintegrate", r#"{"map": {"map": "cylindrical"}, "#);
    assert_eq!(r.code, 2);
}

fn cdcheck_config(kappa: f64, n_eff: f64) -> String {
    format!(
        r#"{{"map": {{"map": "cylindrical"}},
            "cdcheck": {{"mode": "leaf", "kappa": {kappa}, "n_eff": {n_eff},
                        "samples": {{"kind": "random", "lo": [0.5,-1,-1], "hi": [2,1,1], "count": 40}}}}}}"#
    )
}

#[test]
fn cdcheck_cylinder_cases() {
    assert_eq!(run("cdcheck", &cdcheck_config(0.0, 3.0)).code, 0);
    assert_eq!(run("cdcheck", &cdcheck_config(0.1, 3.0)).code, 1);
    assert_eq!(run("cdcheck", &cdcheck_config(0.0, 2.5)).code, 2);
}

#[test]
fn cdcheck_report_has_header() {
    let r = run("cdcheck", &cdcheck_config(0.0, 3.0));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(r.out.join("cdcheck.json")).unwrap()).unwrap();
    assert_eq!(doc["header"]["command"], "cdcheck");
    assert_eq!(doc["header"]["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(doc["result"]["pass"], true);
    assert!(doc["result"]["worst_margin"].as_f64().unwrap().abs() <= 1e-4);
}

#[test]
fn ambient_gaussian_cdcheck() {
    let r = run(
        "cdcheck",
        r#"{"map": {"map": "identity", "n": 3}, "measure": {"rho": "gaussian"},
            "cdcheck": {"mode": "ambient", "kappa": 1.0, "n_eff": "inf",
                        "samples": {"kind": "random", "lo": [-2,-2,-2], "hi": [2,2,2], "count": 20}}}"#,
    );
    assert_eq!(r.code, 0);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let r = run("chart", r#"{"map": {"map": "cylindrical"}, "seeed": 1}"#);
    assert_eq!(r.code, 2);
}

#[test]
fn chart_writes_json() {
    let r = run("chart", r#"{"map": {"map": "cylindrical"}}"#);
    assert_eq!(r.code, 0);
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(r.out.join("chart.json")).unwrap()).unwrap();
    assert!(!doc["result"][0]["bases"].as_array().unwrap().is_empty());
}
