use std::process::Command;

fn conelab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_conelab")).args(args).output().unwrap()
}

#[test]
fn passing_run_exits_zero_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = conelab(&["run", "--config", "linear-2d", "--out", dir.path().to_str().unwrap(), "--workers", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report.json").exists());
    let rep = conelab(&["report", dir.path().join("report.json").to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("splitting"));
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ctl.json");
    std::fs::write(&cfg, r#"{"schema_version":1,"name":"ctl","seed":5,"system":{"kind":"control"},"checks":["battery"]}"#).unwrap();
    let out = conelab(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"schema_version":1,"name":"x","system":{"kind":"linear-test"},"checks":["splitting"]}"#).unwrap();
    let out = conelab(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert_eq!(conelab(&["sweep", "--config", "linear-2d", "--axis", "warp", "--values", "1"]).status.code(), Some(2));
}

#[test]
fn sweep_prints_one_row_per_value() {
    let out = conelab(&["sweep", "--config", "linear-2d", "--axis", "delta", "--values", "0.01,0.05", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);
}
