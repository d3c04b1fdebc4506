use std::process::{Command, Output};

use conlap::harness::CSV_COLUMNS;
use conlap::nets::Net;

fn conlap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conlap")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn spectrum_writes_csv_rows() {
    let out = conlap(&["spectrum", "--rho", "0.3", "--eps", "0.06", "--k", "3", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 3);
}

#[test]
fn sweep_writes_a_json_report_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = conlap(&[
        "sweep",
        "--manifold",
        "circle",
        "--bundle",
        "flat-u1",
        "--holonomy",
        "0.25",
        "--rho",
        "0.2",
        "--k",
        "2",
        "--format",
        "json",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["levels"].as_array().unwrap().len(), 3);
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
    assert_eq!(report["decay"].as_array().unwrap().len(), 2);
}

#[test]
fn net_json_round_trips() {
    let out = conlap(&["net", "--manifold", "sphere", "--eps", "0.4", "--seed", "5", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let net = Net::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let total: f64 = net.measures().unwrap().iter().sum();
    assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-9);
}

#[test]
fn oracle_agrees() {
    let out = conlap(&["oracle", "--manifold", "sphere", "--bundle", "tangent-sphere", "--rho", "0.6", "--eps", "0.2", "--k", "6"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 7);
}

#[test]
fn lemma_suite_passes() {
    let out = conlap(&["check", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn configuration_errors_exit_with_2() {
    assert_eq!(code(&conlap(&["spectrum", "--bundle", "mobius", "--rho", "0.2"])), 2);
    assert_eq!(code(&conlap(&["spectrum", "--manifold", "klein", "--rho", "0.2"])), 2);
    assert_eq!(code(&conlap(&["spectrum", "--holonomy", "0.5", "--rho", "0.2"])), 2);
    assert_eq!(code(&conlap(&["spectrum", "--format", "xml", "--rho", "0.2"])), 2);
    assert_eq!(code(&conlap(&["spectrum"])), 2);
}

#[test]
fn regime_rejections_exit_with_3() {
    assert_eq!(code(&conlap(&["spectrum", "--rho", "0.6"])), 3);
    assert_eq!(code(&conlap(&["spectrum", "--rho", "0.4", "--eps", "0.3", "--k", "500"])), 3);
}

#[test]
fn non_convergence_exits_with_4() {
    let out = conlap(&["spectrum", "--rho", "0.3", "--eps", "0.06", "--k", "4", "--force-lanczos", "--tol", "1e-300"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    // the partial rows are still written
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 5);
}
