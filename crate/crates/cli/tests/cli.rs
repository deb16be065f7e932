use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_macrodg"))
}

#[test]
fn convergence_run_writes_report_with_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--h", "0.6,0.3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("mode,h,gamma0,gamma1,gamma2,offset_x,offset_y,l2_bulk"));
    assert_eq!(lines.iter().filter(|l| l.starts_with("convergence,")).count(), 2);
    assert!(lines.iter().any(|l| l.starts_with("# rate 0.6,0.3")));
}

#[test]
fn config_file_and_partition_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"mode": "robustness", "h": [0.3], "offsets": 2, "seed": 4, "condition": false}"#).unwrap();
    let out = bin()
        .args(["run", "--dump-partitions", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("robustness,")).count(), 2);
    assert!(dir.path().join("partition_001_2.txt").exists());
}

#[test]
fn same_seed_same_report() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = bin()
            .args(["run", "--mode", "robustness", "--h", "0.3", "--offsets", "2", "--seed", "9", "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        // Drop the runtime column.
        text.lines()
            .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 16).map(|(_, f)| f).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn bad_configuration_exits_with_one() {
    let out = bin().args(["run", "--h", "0.4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divide"));
    let out = bin().args(["run", "--mode", "sideways"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["run", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    // A radius that leaves the box fails every run.
    fs::write(&cfg, r#"{"h": [0.3], "radius": 1.6}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(text.contains("setup-error"));
}
