use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpz-stationary")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data lines of a CSV record (header included).
fn table(o: &Output) -> Vec<String> {
    stdout(o).lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

#[test]
fn stationary_succeeds_and_sums_to_one() {
    let o = run(&["stationary", "--u", "1", "--v", "0.5", "--n-sites", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = table(&o);
    assert_eq!(rows[0], "index,configuration,probability");
    assert_eq!(rows.len(), 17);
    let total: f64 = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn missing_u_is_a_configuration_error() {
    let o = run(&["phi-limit", "--v", "1", "--x", "1", "--c", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--u"));
}

#[test]
fn mismatched_d_is_a_configuration_error() {
    let o = run(&["phi-n", "--u", "1", "--v", "0.5", "--n-sites", "4", "--d", "2", "--x", "0.5", "--c", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convergence_outside_range_is_rejected() {
    let o = run(&["convergence", "--u", "0.3", "--v", "0.5", "--x", "0.5", "--c", "5", "--ladder", "4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn phase_scan_has_nine_rows() {
    let o = run(&["phase-scan", "--n-sites", "20", "--events", "20000", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = table(&o);
    assert_eq!(rows.len(), 10);
    let boundary = rows.iter().filter(|r| r.contains(",boundary,")).count();
    assert_eq!(boundary, 4);
    assert!(rows.iter().any(|r| r.contains("maximal-current")));
    assert!(rows.iter().any(|r| r.contains("low-density")));
    assert!(rows.iter().any(|r| r.contains("high-density")));
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let ok = run(&["verify"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(stdout(&ok).contains("# passed: true"));
    let bad = run(&["verify", "--perturb", "0.01"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("normalisation,") && stdout(&bad).contains(",false"));
}

#[test]
fn json_output_is_valid() {
    let o = run(&["phi-limit", "--u", "1", "--v", "1", "--x", "1", "--c", "0.5", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).expect("valid json");
    assert_eq!(v["command"], "phi-limit");
    assert!(v["wall_time_s"].as_f64().unwrap() >= 0.0);
    let phi = v["rows"][0][0].as_f64().unwrap();
    let sp = v["summary"]["single_point_formula"].as_f64().unwrap();
    assert!((phi - sp).abs() < 1e-9);
}

#[test]
fn seeded_runs_are_byte_identical() {
    let args = ["simulate", "--u", "1", "--v", "0.5", "--n-sites", "8", "--t-max", "500", "--seed", "11"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["coupled", "--u", "1", "--v", "0.5", "--n-sites", "8", "--events", "5000", "--seed", "2"]);
    let d = run(&["coupled", "--u", "1", "--v", "0.5", "--n-sites", "8", "--events", "5000", "--seed", "2"]);
    assert_eq!(c.status.code(), Some(0));
    assert_eq!(c.stdout, d.stdout);
}

#[test]
fn out_flag_writes_file() {
    let path = std::env::temp_dir().join(format!("kpz-cli-test-{}.csv", std::process::id()));
    let o = run(&["cdh-table", "--u", "2", "--v", "-0.6", "--points", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert!(text.lines().any(|l| l.starts_with("atom,")));
    assert_eq!(text.lines().filter(|l| l.starts_with("density,")).count(), 3);
}
