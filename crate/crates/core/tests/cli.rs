mod common;

use std::process::{Command, Output};

use common::fixture_path;

fn editsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_editsched"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let fixture = fixture_path();
    let o = editsched(&[
        "run",
        "--config",
        fixture.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 61);
    assert!(csv.starts_with("scenario,bucket,config,edit_mse,preserve_mse,mask_iou,frame_steps\n"));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("30/30 correct"));
}

#[test]
fn run_json_to_stdout_is_repeatable() {
    let fixture = fixture_path();
    let args = [
        "run",
        "--config",
        fixture.to_str().unwrap(),
        "--format",
        "json",
        "--seed",
        "4",
    ];
    let (a, b) = (editsched(&args), editsched(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 60);
    assert_eq!(v["baseline"], "baseline");
}

#[test]
fn classify_reports_allocation() {
    let o = editsched(&["classify", "--instruction", "add a fedora hat"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["level"], "medium");
    assert_eq!(v["reasoning_steps"], 8);
    assert_eq!(v["reasoning_frames"], 4);
    assert_eq!(v["frame_steps"], 94);
}

#[test]
fn edit_with_injection_and_overrides() {
    let fixture = fixture_path();
    let o = editsched(&[
        "edit",
        "--config",
        fixture.to_str().unwrap(),
        "--scenario",
        "medium-03",
        "--rpfi",
        "--rpfi-beta",
        "2.0",
        "--baseline-nr",
        "5",
        "--baseline-r",
        "3",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs[0]["frame_steps"], 5 * 5 + 25 * 2);
    assert_eq!(runs[1]["frame_steps"], 94);
}

#[test]
fn mask_prints_grid_and_coverage() {
    let fixture = fixture_path();
    let o = editsched(&[
        "mask",
        "--config",
        fixture.to_str().unwrap(),
        "--scenario",
        "low-02",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 16);
    assert!(text.lines().all(|l| l.split(',').count() == 16));
    assert!(String::from_utf8_lossy(&o.stderr).contains("coverage="));

    let o = editsched(&[
        "mask",
        "--config",
        fixture.to_str().unwrap(),
        "--scenario",
        "low-02",
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let c = v["coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&c));
}

#[test]
fn config_problems_exit_one() {
    let fixture = fixture_path();
    assert_eq!(
        editsched(&["run", "--config", "/does/not/exist.toml"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        editsched(&[
            "edit",
            "--config",
            fixture.to_str().unwrap(),
            "--scenario",
            "nope"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        editsched(&[
            "run",
            "--config",
            fixture.to_str().unwrap(),
            "--rpfi-beta",
            "0.5"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        editsched(&[
            "run",
            "--config",
            fixture.to_str().unwrap(),
            "--format",
            "xml"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        editsched(&["classify", "--instruction", "   "])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(editsched(&[]).status.code(), Some(1));
    assert_eq!(editsched(&["--help"]).status.code(), Some(0));
}

#[test]
fn failed_rows_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suite.toml");
    std::fs::write(
        &path,
        r#"
[[configurations]]
name = "baseline"
kind = "baseline"

[[scenarios]]
name = "off-grid"
instruction = "add a hat"
expected_complexity = "medium"
kind = "region-replace"
grid = { channels = 1, height = 4, width = 4 }
region = { top = 3, left = 3, height = 2, width = 2 }
magnitude = 1.0
"#,
    )
    .unwrap();
    let o = editsched(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        stdout(&o).lines().nth(1),
        Some("off-grid,medium,baseline,,,,")
    );
}
