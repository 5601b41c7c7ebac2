use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use episim::sim::{Scenario, Trace};

fn episim(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_episim")).args(args).env("EPISIM_THREADS", "1").output().expect("binary runs");
    assert!(out.status.success(), "episim {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_run_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = String::from_utf8(episim(&["gen", "--size", "12", "12", "--robots", "1ugv,1uav", "--tasks", "1", "--seed", "4"]).stdout).unwrap();
    let sc = Scenario::from_json(&text).unwrap();
    assert_eq!(sc.robots.len(), 2);
    assert_eq!(sc.tasks.len(), 1);
    let file = dir.path().join("sc.json");
    fs::write(&file, text).unwrap();

    let out = dir.path().join("run");
    let row = String::from_utf8(episim(&["run", "--scenario", p(&file), "--method", "proposed", "--seed", "4", "--out", p(&out)]).stdout).unwrap();
    assert!(row.contains(",proposed,4,0,"), "{row}");
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let trace = Trace::from_ndjson(&fs::read_to_string(out.join("trace.ndjson")).unwrap()).unwrap();
    assert_eq!(trace.of_kind("start").count(), 1);

    let ascii = String::from_utf8(episim(&["replay", "--trace", p(&out.join("trace.ndjson")), "--render", "ascii"]).stdout).unwrap();
    let rows: Vec<&str> = ascii.lines().collect();
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|r| r.len() == 24));
    assert!(ascii.contains('0') && ascii.contains('1'));
    let pgm = String::from_utf8(episim(&["replay", "--trace", p(&out.join("trace.ndjson")), "--render", "pgm"]).stdout).unwrap();
    assert!(pgm.starts_with("P2\n24 24\n255\n"));
}

#[test]
fn compare_writes_one_row_per_method_and_fault_level() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    episim(&["gen", "--size", "10", "10", "--robots", "2ugv", "--tasks", "1", "--obstacles", "1", "2", "--count", "2", "--out", p(&suite)]);
    assert_eq!(fs::read_dir(&suite).unwrap().count(), 2);
    let table = String::from_utf8(episim(&["compare", "--suite", p(&suite), "--seeds", "1", "--faults", "0,1"]).stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("method,faults,runs"));
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(2) == Some("2")));
    let runs = fs::read_to_string(suite.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_episim")).args(["replay", "--trace", "/nonexistent/trace.ndjson"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("episim: "));
    let out = Command::new(env!("CARGO_BIN_EXE_episim")).args(["gen", "--robots", "3tanks"]).output().unwrap();
    assert!(!out.status.success());
}
