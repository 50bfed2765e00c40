//! Exit codes and file layout of the `sandpile` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sandpile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sandpile")).args(args).output().expect("spawn sandpile")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_owned()
}

#[test]
fn small_verify_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = sandpile(&["verify", "--trials", "20", "--out", &out_arg(d.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["provenance"]["version"], concat!("v", env!("CARGO_PKG_VERSION")));
}

#[test]
fn injected_fault_exits_with_violation() {
    let d = tempfile::tempdir().unwrap();
    let o = sandpile(&["verify", "--inject-fault", "--trials", "20", "--out", &out_arg(d.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&sandpile(&["verify", "--workers", "many"])), 2);
    assert_eq!(code(&sandpile(&["shuffle"])), 2);
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&sandpile(&["verify", "--workers", "0", "--out", &out_arg(d.path())])), 2);
}

#[test]
fn bad_config_files_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let unknown = d.path().join("unknown.toml");
    fs::write(&unknown, "[settle]\nzetta = 0.3\n").unwrap();
    let bad_q = d.path().join("bad_q.toml");
    fs::write(&bad_q, "[settle]\nq = 1.5\n").unwrap();
    for cfg in [&unknown, &bad_q] {
        let o = sandpile(&["settle", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&d.path().join("o"))]);
        assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn unreadable_paths_exit_3() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope.toml");
    assert_eq!(code(&sandpile(&["verify", "--config", missing.to_str().unwrap()])), 3);
    // a regular file where the output directory should go
    let file = d.path().join("file");
    fs::write(&file, "").unwrap();
    assert_eq!(code(&sandpile(&["verify", "--trials", "5", "--out", &out_arg(&file.join("sub"))])), 3);
}

#[test]
fn flags_override_the_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(
        &cfg,
        "[common]\nseed = 1\ntrials = 1000\n[settle]\nbudget = 4\nwindow = 200\nq = 0.6\nstep_cap = 100000\n",
    )
    .unwrap();
    let out = d.path().join("o");
    let o = sandpile(&["settle", "--config", cfg.to_str().unwrap(), "--seed", "7", "--trials", "5", "--out", &out_arg(&out)]);
    assert!(code(&o) <= 1, "{}", String::from_utf8_lossy(&o.stderr));
    let runs = fs::read_to_string(out.join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["provenance"]["seed"], 7);
    let header = fs::read_to_string(out.join("tails.csv")).unwrap();
    assert!(header.starts_with("s,n_cond,emp_a_tail,emp_c_tail,bound_a,exact_c,"));
}
