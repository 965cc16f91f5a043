//! End-to-end checks of the `cpr` binary: file contract, config merging,
//! output formats, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpr"))
}

struct Workdir(PathBuf);

impl Workdir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("cpr-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn run_ok(args: &[&str], out: &Path) -> Output {
    let output = bin().args(args).arg("--out").arg(out).output().unwrap();
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

#[test]
fn experiment_writes_the_file_contract() {
    let dir = Workdir::new("contract");
    run_ok(
        &["experiment", "--n", "32", "--deltas", "1e-2,1e-3"],
        &dir.0,
    );
    for name in ["records.csv", "rates.csv", "summary.txt", "report.json", "config-resolved.json"] {
        assert!(dir.path(name).exists(), "{name} missing");
    }
    let records = dir.read("records.csv");
    assert!(records.starts_with(
        "x0,delta,alpha,eta,iterations,stop_reason,discrepancy,error_sq,bregman_abs,bregman_sym_abs,gap,sign_flag\n"
    ));
    // two starts x two noise levels, plus header; LF endings only
    assert_eq!(records.lines().count(), 5);
    assert!(!records.contains('\r'));
    let rates = dir.read("rates.csv");
    assert!(rates.starts_with("x0,metric,slope,intercept,r_squared,points_used,dropped\n"));
    let summary = dir.read("summary.txt");
    assert!(summary.contains("delta"));
    assert!(summary.contains("x0=1"));
    assert!(summary.contains("x0=0"));
}

#[test]
fn config_file_is_used_and_flags_override_it() {
    let dir = Workdir::new("config");
    std::fs::write(
        dir.path("cfg.json"),
        r#"{"n": 32, "deltas": [1e-2, 1e-3], "solver": "oracle", "seed": 9}"#,
    )
    .unwrap();
    let cfg_path = dir.path("cfg.json");
    run_ok(
        &["experiment", "--config", cfg_path.to_str().unwrap(), "--solver", "gd"],
        &dir.path("run"),
    );
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path("run/config-resolved.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["solver"], "gd");
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["n"], 32);
}

#[test]
fn json_format_replaces_the_csv_tables() {
    let dir = Workdir::new("json");
    run_ok(
        &["experiment", "--n", "32", "--deltas", "1e-2,1e-3", "--format", "json"],
        &dir.0,
    );
    assert!(dir.path("records.json").exists());
    assert!(dir.path("rates.json").exists());
    assert!(!dir.path("records.csv").exists());
    let records: serde_json::Value = serde_json::from_str(&dir.read("records.json")).unwrap();
    assert!(records.is_array());
}

#[test]
fn rates_report_carries_the_theorem_suite() {
    let dir = Workdir::new("rates");
    run_ok(&["rates", "--n", "32"], &dir.0);
    let report: serde_json::Value = serde_json::from_str(&dir.read("report.json")).unwrap();
    assert!(report["converse"]["bounded_flag"].as_bool().unwrap());
    assert!(report["fits"].as_array().unwrap().len() >= 2);
    assert!(report["b2_constant"].as_f64().unwrap().is_finite());
    assert_eq!(report["flags"].as_array().unwrap().len(), 0);
}

#[test]
fn counterexample_reports_exact_identities() {
    let dir = Workdir::new("counter");
    run_ok(&["counterexample"], &dir.0);
    let report: serde_json::Value = serde_json::from_str(&dir.read("report.json")).unwrap();
    assert!(report["identities_ok"].as_bool().unwrap());
    let steps = report["steps"].as_array().unwrap();
    let last_gap = steps.last().unwrap()["r_gap"].as_f64().unwrap();
    assert!((last_gap - 0.125).abs() <= 1e-6);
}

#[test]
fn unknown_solver_exits_2() {
    let dir = Workdir::new("badsolver");
    let output = bin()
        .args(["experiment", "--solver", "bogus", "--out"])
        .arg(&dir.0)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown solver"));
}

#[test]
fn invalid_config_file_exits_2() {
    let dir = Workdir::new("badcfg");
    std::fs::write(dir.path("cfg.json"), r#"{"no_such_knob": 1}"#).unwrap();
    let cfg_path = dir.path("cfg.json");
    let output = bin()
        .args(["experiment", "--config", cfg_path.to_str().unwrap(), "--out"])
        .arg(dir.path("run"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn strict_promotes_iteration_cap_hits_to_exit_1() {
    let dir = Workdir::new("strict");
    let args = ["experiment", "--n", "32", "--deltas", "1e-2,1e-3", "--cap", "5"];
    // without --strict the run still succeeds
    let output = bin().args(args).arg("--out").arg(dir.path("lenient")).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    let output = bin()
        .args(args)
        .args(["--strict", "--out"])
        .arg(dir.path("strict"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("iteration cap"));
}
