use std::path::Path;
use std::process::{Command, Output};

fn cavlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavlab")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_shows_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = cavlab(&["list"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 10);
    for name in ["identity-suite", "path-scan", "mollifier-suite", "zero-motion-scan"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn run_writes_a_json_report_under_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = cavlab(&["run", "identity-suite", "--quiet"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("10 of 10 checks passed"));
    let reports: Vec<_> = std::fs::read_dir(dir.path().join("reports")).unwrap().collect();
    assert_eq!(reports.len(), 1);
    let path = reports[0].as_ref().unwrap().path();
    assert_eq!(path.extension().unwrap(), "json");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["scenario"], "identity-suite");
    assert_eq!(v["passed"], true);
}

#[test]
fn csv_output_to_explicit_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = cavlab(&["run", "path-scan", "--quad", "fast", "--format", "csv", "--out", "out/p.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/p.csv")).unwrap();
    assert!(text.starts_with("scenario,check,value,reference,tolerance,status\n"));
    assert_eq!(text.lines().filter(|l| l.contains(",K-t=")).count(), 6);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cavlab(&["run", "no-such-suite"], dir.path()).status.code(), Some(2));
    assert_eq!(cavlab(&["run", "identity-suite", "--q", "2"], dir.path()).status.code(), Some(2));
    assert_eq!(cavlab(&["run", "identity-suite", "--quad", "sloppy"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("c.json"), r#"{"scenario": "tau-scan"}"#).unwrap();
    let o = cavlab(&["run", "identity-suite", "--config", "c.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau-scan"));
    assert_eq!(cavlab(&["run", "identity-suite", "--config", "missing.json"], dir.path()).status.code(), Some(2));
    assert!(!dir.path().join("reports").exists());
}

#[test]
fn failed_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"scenario": "tau-scan", "quadrature": "fast", "ladder": [0.2, 0.1]}"#,
    )
    .unwrap();
    let o = cavlab(&["run", "tau-scan", "--config", "c.json", "--out", "r.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
    assert!(dir.path().join("r.json").exists());
}
