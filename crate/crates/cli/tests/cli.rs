use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn finitepop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finitepop"))
        .args(args)
        .env_remove("FINITEPOP_SEED")
        .env_remove("FINITEPOP_MODE")
        .output()
        .expect("binary runs")
}

fn path(rel: &str) -> String {
    fixtures().join(rel).to_string_lossy().into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON report on stdout")
}

#[test]
fn p8_oracle_run_reports_exact_estimates() {
    let out = finitepop(&["run", "--config", &path("p8/run.toml"), "--mode", "oracle"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&out);
    assert_eq!(report["mode"], "oracle");
    assert_eq!(report["pass"], true);
    for method in report["methods"].as_array().unwrap() {
        let estimates = method["estimates"].as_array().unwrap();
        let by_t = |t: u64| estimates.iter().find(|e| e["treatment"] == t).unwrap();
        assert_eq!(by_t(1)["estimate"], 7.0);
        assert_eq!(by_t(0)["estimate"], 4.0);
        for v in method["verdicts"].as_array().unwrap() {
            assert_eq!(v["budget"], 0.0);
            assert_eq!(v["pass"], true);
        }
    }
    assert_eq!(report["truth"]["ate"], 3.0);
}

#[test]
fn data_mode_cfd_is_a_precondition_failure() {
    let out = finitepop(&["run", "--config", &path("p8/cfd.toml")]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("CFD unobservable without ground truth"),
        "{stderr}"
    );
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_csv_header_exits_2_without_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("observed.csv"),
        "id,treatment,y,xc_x\n1,1,10,a\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "schema = 1\n[data]\nobserved = \"observed.csv\"\n[[method]]\nkind = \"rct\"\n",
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = finitepop(&[
        "run",
        "--config",
        dir.path().join("run.toml").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert!(!report.exists());
}

#[test]
fn bad_config_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "schema = 1\n\n[[method]]\nkind = 3\n",
    )
    .unwrap();
    let out = finitepop(&[
        "run",
        "--config",
        dir.path().join("run.toml").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn run_report_is_byte_identical() {
    let a = finitepop(&["run", "--config", &path("p8/run.toml")]);
    let b = finitepop(&["run", "--config", &path("p8/run.toml")]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sweep_is_deterministic_and_passes() {
    let a = finitepop(&["sweep", "--config", &path("sweep.toml"), "--seed", "17"]);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    let b = finitepop(&["sweep", "--config", &path("sweep.toml"), "--seed", "17"]);
    assert_eq!(a.stdout, b.stdout);
    let report = json(&a);
    assert_eq!(report["summary"]["methods"]["rct"]["pass_rate"], 1.0);
    let c = finitepop(&["sweep", "--config", &path("sweep.toml"), "--seed", "18"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn zero_replication_sweep_is_empty() {
    let out = finitepop(&[
        "sweep",
        "--config",
        &path("sweep.toml"),
        "--replications",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert_eq!(report["summary"]["replications"], 0);
    assert!(report["summary"]["methods"].as_object().unwrap().is_empty());
}

#[test]
fn dominance_breaker_is_always_detected() {
    let out = finitepop(&["sweep", "--config", &path("iv_sweep.toml")]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&out);
    assert_eq!(report["summary"]["methods"]["dominance"]["pass_rate"], 0.0);
    assert!(
        report["summary"]["methods"]["iv_randomized"]["runs"]
            .as_u64()
            .unwrap()
            > 0
    );
}

#[test]
fn seed_env_override() {
    let a = Command::new(env!("CARGO_BIN_EXE_finitepop"))
        .args([
            "sweep",
            "--config",
            &path("sweep.toml"),
            "--replications",
            "3",
        ])
        .env("FINITEPOP_SEED", "99")
        .output()
        .unwrap();
    let b = finitepop(&[
        "sweep",
        "--config",
        &path("sweep.toml"),
        "--replications",
        "3",
        "--seed",
        "99",
    ]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_then_run_round_trips_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = finitepop(&[
        "simulate",
        "--config",
        &path("scenario.toml"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let truth: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap())
            .unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "schema = 1\n[data]\nobserved = \"observed.csv\"\nfuture = \"future.csv\"\n[[method]]\nkind = \"rct\"\n",
    )
    .unwrap();
    let out = finitepop(&[
        "run",
        "--config",
        dir.path().join("run.toml").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(json(&out)["truth"], truth["truth"]);
}

#[test]
fn audit_verb_defaults() {
    let out = finitepop(&["audit", "--config", &path("p8/run.toml")]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let kinds: Vec<String> = json(&out)["methods"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["kind"].as_str().unwrap().to_string())
        .collect();
    assert!(kinds.contains(&"audit_cfd".to_string()), "{kinds:?}");
    let data = finitepop(&["audit", "--config", &path("p8/run.toml"), "--mode", "data"]);
    assert_eq!(data.status.code(), Some(0));
    assert!(!String::from_utf8_lossy(&data.stdout).contains("audit_cfd"));
}
