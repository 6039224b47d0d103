//! End-to-end runs of the command-line tool.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jackson-ldp"))
}

fn spec(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn validate_exit_codes() {
    let ok = run(&["validate", "--spec", spec("mm1.json").to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).starts_with("# command = validate\n"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"stations":[{"arrival":{"family":"exponential","rate":3},"service":{"family":"exponential","rate":2}}],"routing":[[0]]}"#,
    )
    .unwrap();
    assert_eq!(run(&["validate", "--spec", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["validate", "--spec", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn emitted_path_round_trips_through_path_cost() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    let s = spec("jackson2.json");
    let qp = run(&[
        "quasipotential", "--spec", s.to_str().unwrap(), "--x", "0.6,0.3", "--starts", "3", "--format", "json",
        "--path-out", path.to_str().unwrap(),
    ]);
    assert_eq!(qp.status.code(), Some(0), "{}", String::from_utf8_lossy(&qp.stderr));
    let record: serde_json::Value = serde_json::from_str(&stdout(&qp)).unwrap();
    let value = record["result"]["value"].as_f64().unwrap();

    let cost = run(&["path-cost", "--spec", s.to_str().unwrap(), "--path", path.to_str().unwrap(), "--format", "json"]);
    let record: serde_json::Value = serde_json::from_str(&stdout(&cost)).unwrap();
    let action = record["result"]["action"].as_f64().unwrap();
    assert!((action - value).abs() <= 1e-12, "{action} vs {value}");
}

#[test]
fn tail_output_is_byte_identical_for_a_seed() {
    let s = spec("mm1.json");
    let args = ["tail", "--spec", s.to_str().unwrap(), "--x", "1", "--n-grid", "2,4", "--reps", "2000", "--seed", "4"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.contains("# reps = 2000\n") && text.contains("n,p_hat,ci_lo,ci_hi,hits,samples,censored\n"));
}

#[test]
fn simulate_reports_a_reproducible_digest() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("gamma_tandem.json");
    let events = dir.path().join("events.csv");
    let args = ["simulate", "--spec", s.to_str().unwrap(), "--horizon", "50", "--seed", "9", "--events-out", events.to_str().unwrap()];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("# event_log_sha256 = "));
    assert!(std::fs::read_to_string(&events).unwrap().starts_with("time,station,kind,to\n"));
}

#[test]
fn verify_excludes_the_origin_and_rejects_bad_targets() {
    let s = spec("mm1.json");
    let ok = run(&["verify", "--spec", s.to_str().unwrap(), "--target", "0", "--reps", "100"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("excluded"));
    let bad = run(&["verify", "--spec", s.to_str().unwrap(), "--target", "abc"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn local_rate_prints_the_value_row() {
    let s = spec("mm1.json");
    let o = run(&["local-rate", "--spec", s.to_str().unwrap(), "--x", "0", "--y", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("value,,"));
}
