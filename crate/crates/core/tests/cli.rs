//! Black-box checks of the `barrierlab` binary: exit-code contract, flag
//! handling, and byte-stable run artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_barrierlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

#[test]
fn classify_reports_the_regime_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "classify",
        "--alpha",
        "-1",
        "--beta",
        "1",
        "--ctan",
        "2",
        "--cnorm",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("VI(mu=1, ell=2)"), "stdout: {stdout}");
    let report = String::from_utf8_lossy(&read(&out, "report.json")).into_owned();
    assert!(report.contains("\"phase\": \"VI(mu=1, ell=2)\""));
    assert!(out.join("results.csv").exists());
    assert!(out.join("plot.gp").exists());
    assert!(out.join("run.log").exists());
}

#[test]
fn config_errors_exit_two_with_a_message() {
    // Increasing width schedule.
    let res = run(&["mosco", "--eps", "0.1,0.2"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error:"));

    // Config written for a different run kind.
    let tmp = tempfile::tempdir().unwrap();
    let cfgpath = tmp.path().join("run.cfg");
    fs::write(&cfgpath, "kind = continuity\n").unwrap();
    let res = run(&["mosco", "--config", cfgpath.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    // Missing config file.
    let res = run(&["mosco", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn failed_checks_exit_one() {
    // A rate sweep walking away from its stated target: errors grow, so the
    // run completes but its verdict is a failure.
    let tmp = tempfile::tempdir().unwrap();
    let cfgpath = tmp.path().join("run.cfg");
    fs::write(&cfgpath, "family = II\nsweep = 4,2\nsweep_target = inf\n").unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "continuity",
        "--config",
        cfgpath.to_str().unwrap(),
        "--grid",
        "2,2,16,8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let report = String::from_utf8_lossy(&read(&out, "report.json")).into_owned();
    assert!(report.contains("\"pass\": false"));
}

#[test]
fn identical_configs_produce_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |dir: &Path| {
        vec![
            "mosco".to_string(),
            "--alpha".into(),
            "0".into(),
            "--beta".into(),
            "0".into(),
            "--eps".into(),
            "0.5,0.25".into(),
            "--grid".into(),
            "2,2,8,8".into(),
            "--t".into(),
            "0.2".into(),
            "--dt".into(),
            "0.05".into(),
            "--out".into(),
            dir.to_str().unwrap().to_string(),
        ]
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let ra = bin().args(args(&a)).output().unwrap();
    let rb = bin().args(args(&b)).output().unwrap();
    assert_eq!(ra.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&ra.stderr));
    assert_eq!(rb.status.code(), Some(0));
    // Every artifact except the timing sidecar is reproducible byte for byte.
    for name in ["results.csv", "report.json", "plot.gp"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs between identical runs");
    }
    let csv = String::from_utf8_lossy(&read(&a, "results.csv")).into_owned();
    assert!(csv.starts_with("parameter,error,se\n"), "csv: {csv}");
}

#[test]
fn thread_flag_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "classify",
        "--alpha",
        "1",
        "--beta",
        "1",
        "--threads",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).contains("II(kappa=1)"));
}
