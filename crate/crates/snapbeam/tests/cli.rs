//! End-to-end checks of the `snapbeam` binary: artifact shapes, exit codes,
//! and determinism of reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snapbeam(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snapbeam"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn generate_then_trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = snapbeam(&["generate", "von-mises"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let scenario = dir.path().join("von-mises.scenario.json");
    assert!(scenario.exists());

    let out = snapbeam(&["trace", scenario.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("termination target_reached"));

    let csv = fs::read_to_string(dir.path().join("von-mises.path.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("step,lambda,energy,min_eig,det_sign,q_0"));
    // 3 nodes -> 9 dofs -> 14 columns.
    assert_eq!(header.split(',').count(), 14);
    assert_eq!(csv.lines().last().unwrap(), "# termination=target_reached");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("von-mises.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["termination"], "target_reached");
    assert_eq!(report["states"][0]["label"], "initial");
    assert_eq!(report["states"][0]["stable"], true);
}

#[test]
fn trace_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert!(snapbeam(&["generate", "von-mises"], dir.path()).status.success());
    let scenario = dir.path().join("von-mises.scenario.json");
    let scenario = scenario.to_str().unwrap();

    let run = |sub: &Path| {
        let out = snapbeam(&["trace", scenario, "--svg"], sub);
        assert!(out.status.success(), "{}", stderr(&out));
        (
            fs::read(sub.join("von-mises.path.csv")).unwrap(),
            fs::read(sub.join("von-mises.report.json")).unwrap(),
            fs::read(sub.join("von-mises.svg")).unwrap(),
        )
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b);
}

#[test]
fn invalid_rise_exits_2_and_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let out = snapbeam(&["generate", "arch", "--rise", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rise"), "{}", stderr(&out));
}

#[test]
fn usage_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = snapbeam(&["trace", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_scenario_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = snapbeam(&["trace", "does-not-exist.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("does-not-exist.json"));
}

#[test]
fn sense_bundled_trace_reports_both_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let asset = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/opening_trace.csv");
    let out = snapbeam(&["sense", asset], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));

    let peaks: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("opening_trace.peaks.json")).unwrap())
            .unwrap();
    let peaks = peaks["peaks"].as_array().unwrap();
    assert_eq!(peaks.len(), 2);
    assert_eq!(peaks[0]["p"], 13.0);
    assert_eq!(peaks[1]["p"], 11.0);

    let events = fs::read_to_string(dir.path().join("opening_trace.events.csv")).unwrap();
    assert_eq!(events.lines().next().unwrap(), "t,event,phase");
    assert!(events.lines().nth(1).unwrap().contains("open_to_closing"));
}

#[test]
fn sense_constant_trace_has_empty_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("flat.csv");
    let body: String = std::iter::once("t,p".to_string())
        .chain((0..50).map(|i| format!("{i},5.0")))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&trace, body).unwrap();
    let out = snapbeam(&["sense", trace.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let events = fs::read_to_string(dir.path().join("flat.events.csv")).unwrap();
    assert_eq!(events.trim(), "t,event,phase");
}

#[test]
fn malformed_trace_exits_1_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.csv");
    fs::write(&trace, "t,p\n0,1\n1,oops\n").unwrap();
    let out = snapbeam(&["sense", trace.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn sense_invalid_debounce_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    fs::write(&trace, "t,p\n0,1\n").unwrap();
    let out = snapbeam(
        &["sense", trace.to_str().unwrap(), "--debounce", "0"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("debounce"), "{}", stderr(&out));
}

#[test]
fn solver_override_reaches_partial_path_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert!(snapbeam(&["generate", "von-mises"], dir.path()).status.success());
    let scenario = dir.path().join("von-mises.scenario.json");
    // Starve the step budget: the run must fail loudly but still write a
    // flagged partial path.
    let out = snapbeam(
        &["trace", scenario.to_str().unwrap(), "--max-steps", "3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let csv = fs::read_to_string(dir.path().join("von-mises.path.csv")).unwrap();
    assert_eq!(csv.lines().last().unwrap(), "# termination=max_steps");
}
