use conelab::harness::{self, Axis, CheckKind, ExperimentConfig};
use conelab::Error;

fn inline(text: &str) -> conelab::Result<ExperimentConfig> {
    ExperimentConfig::from_json(text, "inline")
}

#[test]
fn config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = harness::bundled("linear-2d").unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back.hash(), cfg.hash());
}

#[test]
fn report_and_artifacts_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let r = harness::run(&harness::bundled("linear-2d").unwrap()).unwrap();
    r.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["body"]["name"], "linear-2d");
    assert!(v["timing_ms"].is_object());
    let csv = std::fs::read_to_string(dir.path().join("splitting.csv")).unwrap();
    assert!(csv.starts_with("base,index,exponent,gap,m"));
}

#[test]
fn seed_changes_the_body_but_not_the_config_shape() {
    let mut cfg = harness::bundled("linear-2d").unwrap();
    let a = harness::run(&cfg).unwrap();
    cfg.seed += 1;
    let b = harness::run(&cfg).unwrap();
    assert_ne!(a.body.config_hash, b.body.config_hash);
    assert_eq!(a.body.checks.len(), b.body.checks.len());
}

#[test]
fn unknown_fields_and_versions_are_config_errors() {
    let bad_field = r#"{"schema_version":1,"name":"x","seed":1,"system":{"kind":"linear-test"},"checks":["splitting"],"bogus":3}"#;
    assert!(matches!(inline(bad_field), Err(Error::Config { .. })));
    let bad_version = r#"{"schema_version":2,"name":"x","seed":1,"system":{"kind":"linear-test"},"checks":["splitting"]}"#;
    let e = inline(bad_version).unwrap_err();
    assert!(e.to_string().contains("schema_version"), "{e}");
    let bad_delta = r#"{"schema_version":1,"name":"x","seed":1,"system":{"kind":"linear-test"},"checks":["constants"],"cones":{"delta":1.5}}"#;
    assert!(inline(bad_delta).unwrap_err().to_string().contains("cones.delta"));
}

#[test]
fn failing_check_is_reported_not_raised() {
    let text = r#"{"schema_version":1,"name":"ctl","seed":5,"system":{"kind":"control"},"checks":["battery"]}"#;
    let r = harness::run(&inline(text).unwrap()).unwrap();
    assert!(!r.body.passed);
    assert!(r.body.checks[0].error.is_none());
}

#[test]
fn sweep_keeps_axis_order_and_row_errors() {
    let cfg = harness::bundled("linear-2d").unwrap();
    let s = harness::sweep(&cfg, Axis::Delta, &[0.02, 2.0, 0.01]);
    assert!(s.reports[0].is_ok() && s.reports[2].is_ok());
    assert!(s.reports[1].as_ref().unwrap_err().contains("cones.delta"));
    let csv = s.summary_csv();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("0.02,true"));
    assert!(rows[2].starts_with("2,false"));
    assert!(!s.passed());
}

#[test]
fn sweep_over_grid_size_runs_each_point() {
    let mut cfg = harness::bundled("heat").unwrap();
    cfg.checks = vec![CheckKind::Heat];
    let s = harness::with_workers(Some(2), || harness::sweep(&cfg, Axis::N, &[8.0, 16.0])).unwrap();
    assert!(s.passed(), "{}", s.summary_csv());
}
