use std::io::Write;
use std::process::{Command, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_nlbim");

fn nlbim(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("RUST_BACKTRACE")
        .output()
        .unwrap()
}

#[test]
fn run_experiment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = nlbim(&["run-experiment", "--codes", "CE1,TI2", "--runs", "3", "--seed", "7", "--jobs", "1", "--out", out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("| Structural material | 6 | 6 | 100.00%[^1] |"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("code,run,material_pass,thickness_pass,attempts,duration_ms,spec_file"));
    assert_eq!(csv.lines().count(), 7);
    assert!(dir.path().join("specs/TI2-003.json").exists());
    assert!(dir.path().join("summary.md").exists());

    // Same seed, parallel executor, resumed over a finished run: identical bytes.
    let res = nlbim(&["run-experiment", "--codes", "CE1,TI2", "--runs", "3", "--seed", "7", "--jobs", "2", "--resume", "--out", out]);
    assert!(res.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("records.csv")).unwrap(), csv);
}

#[test]
fn live_runs_need_confirmation() {
    let dir = tempfile::tempdir().unwrap();
    let res = nlbim(&["run-experiment", "--backend", "live", "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("--confirm-live"), "{err}");
    assert!(err.contains("240 runs"), "{err}");
    assert!(!dir.path().join("records.csv").exists());
}

#[test]
fn bad_codes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let res = nlbim(&["run-experiment", "--codes", "CE1,XX9", "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8(res.stderr).unwrap().contains("XX9"));
}

#[test]
fn repl_session() {
    let mut child = Command::new(BIN)
        .args(["repl", "--seed", "1"])
        .env("RUST_LOG", "warn")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"Create an exterior wall for Alaska.\n:project\nRotate a model 90 degrees on the X axis\n:quit\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Timber wall for Alaska"), "{text}");
    assert!(text.contains("All checks passed on attempt 1"), "{text}");
    assert!(text.contains("Fill      skipped"), "{text}");
    assert!(text.contains("wt-1 Timber wall for Alaska (rev 1"), "{text}");
}

#[test]
fn serve_needs_a_config() {
    let res = nlbim(&["serve"]);
    assert!(!res.status.success());
    assert!(String::from_utf8(res.stderr).unwrap().contains("--config"));
}
