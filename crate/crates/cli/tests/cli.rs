use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn gaitopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitopt")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gaitopt-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["kind"].as_str().unwrap().to_string()
}

#[test]
fn walk_writes_report_csv_and_trace() {
    let dir = scratch("walk");
    let (csv, trace) = (dir.join("walk.csv"), dir.join("trace.jsonl"));
    let input = data("long_slow_steps.json");
    let out = gaitopt(&["walk", path(&input), "--csv", path(&csv), "--trace", path(&trace)]);
    assert_eq!(out.status.code(), Some(0));

    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["summary"]["all_converged"], true);
    assert!(report["summary"]["max_knee_bend_after"].as_f64().unwrap() <= 0.42);

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 13);
    assert!(lines.all(|l| l.split(',').count() == 13));

    for line in std::fs::read_to_string(&trace).unwrap().lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record.get("step").is_some());
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn no_adjust_keeps_timing_and_exceeds_target() {
    let input = data("long_slow_steps.json");
    let out = gaitopt(&["walk", path(&input), "--no-adjust"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["summary"]["adjusted_steps"], 0);
    assert_eq!(report["summary"]["total_abs_delta_t"], 0.0);
    assert!(report["summary"]["max_knee_bend_before"].as_f64().unwrap() > 0.42);
}

#[test]
fn plan_writes_artifacts() {
    let dir = scratch("plan");
    let input = data("long_slow_steps.json");
    let out = gaitopt(&["plan", path(&input), "--out", path(&dir)]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let swings = summary["swings"].as_u64().unwrap() as usize;
    assert_eq!(swings, 4);
    assert_eq!(summary["touchdown_com"].as_array().unwrap().len(), swings);

    let plan = std::fs::read_to_string(dir.join("plan.csv")).unwrap();
    let width = plan.lines().next().unwrap().split(',').count();
    assert!(plan.lines().all(|l| l.split(',').count() == width));
    let corners: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("corners.json")).unwrap()).unwrap();
    assert!(corners.is_array());
    assert_eq!(std::fs::read_to_string(dir.join("regions.jsonl")).unwrap().lines().count(), swings);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn sweep_prints_one_row_per_cell() {
    let out = gaitopt(&["sweep", "--lengths", "0.2,0.6", "--targets", "0.4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    let width = rows[0].split(',').count();
    assert!(rows.iter().all(|r| r.split(',').count() == width));
    assert!(rows[2].starts_with("0.6,0.4,"));
}

#[test]
fn missing_input_is_io_failure() {
    let out = gaitopt(&["walk", "/nonexistent/walk.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_kind(&out), "io");
}

#[test]
fn malformed_input_is_parse_failure() {
    let dir = scratch("parse");
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{\"footsteps\": [").unwrap();
    let out = gaitopt(&["walk", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_kind(&out), "parse");
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn invalid_config_is_rejected() {
    let dir = scratch("config");
    let config = dir.join("config.json");
    std::fs::write(&config, r#"{"loop": {"k_p": -1.0}}"#).unwrap();
    let input = data("long_slow_steps.json");
    let out = gaitopt(&["walk", path(&input), "--config", path(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_kind(&out), "invalid_config");
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn too_few_footsteps_is_invalid_plan() {
    let dir = scratch("plan-invalid");
    let input = dir.join("short.json");
    std::fs::write(
        &input,
        r#"{"footsteps": [{"side": "left", "ankle_position": [0, 0.1, 0]}],
            "timing_defaults": {"t_ini_ds": 0.1, "t_end_ds": 0.1, "t_ini_ss": 0.3, "t_end_ss": 0.3}}"#,
    )
    .unwrap();
    let out = gaitopt(&["walk", path(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_kind(&out), "invalid_plan");
    std::fs::remove_dir_all(dir).unwrap();
}
