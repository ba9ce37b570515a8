use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpg")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn example_1d_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpg(&["example-1d", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("00_constant_0.005.csv")).unwrap();
    assert!(csv.starts_with("t,A,B,C,R1,R2,alpha,consensus_bound,main_bound,x1,x2,R_fixed\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    assert_eq!(runs[3]["status"]["status"], "diverged", "{}", runs[3]["status"]);
}

#[test]
fn run_requires_a_config() {
    let out = dpg(&["run"]);
    assert!(!out.status.success());
}

#[test]
fn run_custom_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{
            "experiment": "custom",
            "problem": {
                "costs": [{"kind": "scalar1d", "a": 1.0}, {"kind": "scalar1d", "a": 2.0}, {"kind": "scalar1d", "a": 3.0}],
                "set": {"kind": "interval", "lower": 1.0, "upper": 5.0}
            },
            "graph": {"kind": "complete"},
            "initial_states": [[4.0], [2.0], [3.0]],
            "schedules": [{"kind": "constant", "alpha": 0.05}],
            "horizon": 200
        }"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = dpg(&["run", "--config", path(&cfg), "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("00_constant_0.05.csv")).unwrap();
    assert_eq!(csv.lines().count(), 202);
}

#[test]
fn constants_prints_json() {
    let out = dpg(&["constants", "--experiment", "one-dim", "--alpha", "0.01", "--variant", "proof"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let c = &v["00_constant_0.01"];
    assert_eq!(c["variant"], "proof");
    assert_eq!(c["c1"], 450.0);
    assert_eq!(c["rho"], 10000.0);
}

#[test]
fn check_passes_on_a_small_stepsize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpg(&["check", "--alpha", "0.001", "--horizon", "500", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("check passed"));
    assert!(!dir.path().join("violations.json").exists());
}

#[test]
fn check_fails_on_an_invalid_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpg(&["check", "--alpha", "-1", "--horizon", "10", "--out", path(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn strict_mode_skips_inadmissible_stepsizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpg(&["sweep", "--scaled", "4,1", "--horizon", "50", "--strict", "--bounds", "off", "--out", path(dir.path())]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("00_scaled_4") && text.contains("skipped"), "{text}");
    assert!(!dir.path().join("00_scaled_4.csv").exists());
    assert!(dir.path().join("01_scaled_1.csv").exists());
}
