use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn ulshadow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ulshadow")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_report_trace_and_captures() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.ndjson");
    let caps = dir.path().join("caps.txt");
    let sc = scenarios().join("suci_extraction.toml");
    let o = ulshadow(&["run", s(&sc), "--trace", s(&trace), "--captures", s(&caps)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("scenario suci_extraction"));
    let lines = fs::read_to_string(&trace).unwrap();
    assert!(lines.lines().count() > 100);
    assert!(lines.lines().all(|l| l.starts_with("{\"v\":1,")));
    let caps = fs::read_to_string(&caps).unwrap();
    let rows: Vec<_> = caps.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.starts_with("00a1b2c3000")), "{caps}");
}

#[test]
fn report_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("r.txt");
    let o = ulshadow(&["run", s(&scenarios().join("baseline.toml")), "--report", s(&rep)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    assert!(fs::read_to_string(&rep).unwrap().contains("no attack"));
}

#[test]
fn breached_expectation_exits_3() {
    let sc = scenarios().join("suci_replay_own.toml");
    let o = ulshadow(&["run", s(&sc), "--override", "expect.equal.verdicts_match=2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("verdicts_match"), "{}", stderr(&o));
}

#[test]
fn seed_flag_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenarios().join("baseline.toml");
    let mut traces = Vec::new();
    for (i, seed) in ["1", "1", "2"].iter().enumerate() {
        let t = dir.path().join(format!("{i}.ndjson"));
        let o = ulshadow(&["run", s(&sc), "--seed", seed, "--trace", s(&t), "--override", "duration_s=3", "--override", "expect.min.successful_connections=1"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        traces.push(fs::read(&t).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    assert_ne!(traces[0], traces[2]);
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    for e in fs::read_dir(scenarios()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let o = ulshadow(&["validate", s(&p)]);
            assert_eq!(o.status.code(), Some(0), "{}: {}", p.display(), stderr(&o));
            assert!(stdout(&o).contains(": ok"));
        }
    }
}

#[test]
fn invalid_scenarios_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nduration_s = -1.0\n").unwrap();
    let o = ulshadow(&["validate", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error:"));
    let o = ulshadow(&["run", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&bad, "this is = = not toml").unwrap();
    assert_eq!(ulshadow(&["validate", s(&bad)]).status.code(), Some(2));
    let sc = scenarios().join("baseline.toml");
    assert_eq!(ulshadow(&["validate", s(&sc), "--override", "cells.0.k2=0"]).status.code(), Some(2));
}

#[test]
fn missing_file_is_not_a_validation_error() {
    let o = ulshadow(&["validate", "/nonexistent/x.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn decode_trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.ndjson");
    let sc = scenarios().join("downgrade.toml");
    let o = ulshadow(&["run", s(&sc), "--trace", s(&t), "--override", "duration_s=12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = ulshadow(&["decode-trace", s(&t)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("decoded:"));
    assert!(text.contains("RegistrationReject"));
    assert!(!text.contains("decode error"));

    let mut lines = fs::read_to_string(&t).unwrap();
    lines.push_str("{not json}\n");
    fs::write(&t, lines).unwrap();
    let o = ulshadow(&["decode-trace", s(&t)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line "));
}
