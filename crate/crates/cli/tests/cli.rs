use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tfe6(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfe6"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn m1_writes_profile_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfe6(dir.path(), &["m1", "--lambda", "+1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("m1_summary_plus.json"));
    let g = summary["G"].as_f64().unwrap();
    assert!((g - 0.178318).abs() < 1e-5);
    assert_eq!(summary["n_pieces"], 40);
    assert_eq!(summary["config"]["command"], "m1");
    let csv = std::fs::read_to_string(dir.path().join("m1_phi_star_plus.csv")).unwrap();
    assert!(csv.starts_with("s,phi_star\n"));
    assert_eq!(csv.lines().count(), 1002);
    assert!(dir.path().join("m1_profile_plus.csv").exists());
}

#[test]
fn json_format_replaces_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfe6(
        dir.path(),
        &["m1", "--lambda", "-1", "--pieces", "12", "--format", "json"],
    );
    assert!(out.status.success());
    let rows = read_json(&dir.path().join("m1_phi_star_minus.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 1001);
    assert!(rows[0]["phi_star"].is_number());
    assert!(!dir.path().join("m1_phi_star_minus.csv").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"m": 3.0, "n": 0.0, "lambda": "+1", "abs_tol": 1e-11}"#).unwrap();
    let out = tfe6(dir.path(), &["params", "--config", cfg.to_str().unwrap(), "--m", "1.0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("params_m1_n0.json"));
    assert_eq!(summary["m"], 1.0);
    assert_eq!(summary["lambda"], "+1");
    assert_eq!(summary["config"]["abs_tol"], 1e-11);
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    // m outside (-n, n+2)
    let out = tfe6(dir.path(), &["params", "--m", "3", "--n", "0"]);
    assert_eq!(out.status.code(), Some(5));
    // a bracket with no orbit at its lower end
    let out = tfe6(
        dir.path(),
        &["bifurcate", "--n", "0", "--lambda", "+1", "--bracket", "1.5,1.6"],
    );
    assert_eq!(out.status.code(), Some(4));
    let out = tfe6(
        dir.path(),
        &["bifurcate", "--n", "0", "--lambda", "+1", "--bracket", "1.5"],
    );
    assert_eq!(out.status.code(), Some(1));
    let out = tfe6(dir.path(), &["orbit", "--m", "1.0", "--n", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn orbit_reports_identities_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfe6(dir.path(), &["orbit", "--m", "1", "--n", "0", "--lambda", "-1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("orbit_m1_n0_minus.json"));
    let period = summary["orbit"]["period"].as_f64().unwrap();
    assert!((period - 0.6961732).abs() < 1e-5);
    assert!(summary["identity_residuals"]["r1"].as_f64().unwrap() < 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("orbit_trajectory_m1_n0_minus.csv")).unwrap();
    assert!(csv.starts_with("s_or_y,c0,c1,c2,c3,c4,event_flag"));
}

#[test]
fn intervals_report_bounding_roots() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfe6(dir.path(), &["intervals"]);
    assert!(out.status.success());
    let v = read_json(&dir.path().join("intervals.json"));
    let hi = v["nonexistence_plus"]["mu_hi"].as_f64().unwrap();
    assert!((hi - (2.0 + 6f64.sqrt() / 2.0)).abs() < 1e-12);
    let hi = v["nonexistence_minus"]["mu_hi"].as_f64().unwrap();
    assert!((hi - 2.5439).abs() < 1e-4);
}

#[test]
fn bifurcate_writes_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfe6(
        dir.path(),
        &[
            "bifurcate",
            "--n",
            "0",
            "--lambda",
            "+1",
            "--bracket",
            "1.0,1.6",
            "--tol-m",
            "1e-3",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("bifurcation_n0_plus.json"));
    assert!((v["m_h"].as_f64().unwrap() - 1.338).abs() < 0.01);
    let sweep = std::fs::read_to_string(dir.path().join("bifurcation_sweep_n0_plus.csv")).unwrap();
    assert!(sweep.lines().count() > 5);
}

#[test]
fn positive_matches_explicit_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfe6(dir.path(), &["positive", "--m", "0.5", "--n", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("positive_summary_m0.5_n0.json"));
    let e = v
        .as_object()
        .unwrap()
        .iter()
        .find(|(k, _)| k.contains("error"))
        .and_then(|(_, v)| v.as_f64())
        .unwrap();
    assert!(e < 1e-6);
}
