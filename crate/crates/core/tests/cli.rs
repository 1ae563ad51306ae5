//! End-to-end checks of the `bertrand` binary: exit codes, output files and
//! the CSV schema.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bertrand_core::experiments::{read_csv, CSV_COLUMNS};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bertrand"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&bin().arg("frobnicate").output().unwrap()), 1);
    assert_eq!(code(&bin().args(["verify", "--suite", "thm9"]).output().unwrap()), 1);
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", "--config", "/no/such/file.json"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("/no/such/file.json"));
}

#[test]
fn malformed_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.json",
        r#"{"profile": {"construction": "simple_grim", "N": "four", "K": 10}, "T": 5}"#,
    );
    let o = run(&["run", "--config", &cfg], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("profile"), "{}", text(&o));
}

#[test]
fn run_writes_trace_and_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("run_custom_exact.json");
    let o = run(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let metrics: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((metrics["market_price"].as_f64().unwrap() - 0.91).abs() < 1e-12);

    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["rounds"].as_array().unwrap().len(), 20);

    let csv = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let rows = read_csv(&tmp.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].construction, "custom");
    assert_eq!(rows[0].mode, "exact_automaton");
}

#[test]
fn run_with_learner_in_exact_mode_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{"profile": {"construction": "simple_grim", "N": 3, "K": 10}, "T": 10,
            "defection": {"learner": {"kind": "hedge"}}}"#,
    );
    let o = run(&["run", "--config", &cfg, "--mode", "exact_automaton"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("configuration"), "{}", text(&o));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "s.json",
        r#"{"experiment_id": "small", "construction": "simple_grim", "N": [2, 3], "K": [10, 20], "T": [50],
            "learner": {"kind": "hedge"}, "replicates": 2}"#,
    );
    let o = run(&["sweep", "--config", &cfg, "--seed", "4"], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let rows = read_csv(&tmp.path().join("small.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .all(|r| r.seed == Some(4) && r.replicates == 2 && r.learner == "hedge"));
    assert!(rows
        .iter()
        .all(|r| r.baseline_price.is_some() && r.regret_bound.is_some()));
}

#[test]
fn audit_honours_the_ceiling() {
    let tmp = tempfile::tempdir().unwrap();
    let profile = configs().join("profiles/simple_grim.json");
    let p = profile.to_str().unwrap();
    let o = run(
        &["audit", "--profile", p, "--T", "1000", "--ceiling", "0.002"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("audit.json")).unwrap()).unwrap();
    assert!(report["eq_slack"].as_f64().unwrap() <= 0.002);
    let o = run(&["audit", "--profile", p, "--T", "1000", "--ceiling", "0"], tmp.path());
    assert_eq!(code(&o), 2);

    let da = configs().join("audit_defection_aware.json");
    let o = run(
        &["audit", "--config", da.to_str().unwrap(), "--ceiling", "0.002"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
}

#[test]
fn cce_prints_objective() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["cce", "--M", "2", "--K", "50", "--save"], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let first = String::from_utf8_lossy(&o.stdout).lines().next().unwrap().to_string();
    let obj: f64 = first.trim_start_matches("objective ").parse().unwrap();
    assert!((obj - 2.0 / std::f64::consts::E).abs() < 5.0 / 50.0);
    assert!(tmp.path().join("cce_M2_K50.json").exists());
}

#[test]
fn verify_exit_codes_follow_the_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "verify",
            "--suite",
            "prop1",
            "--N",
            "2,4",
            "--K",
            "100",
            "--T",
            "2000",
            "--replicates",
            "4",
            "--csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let rows = read_csv(&tmp.path().join("prop1.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.pass == Some(true) && r.bound_id.is_some()));

    // The nominal-gap form of the bad-round bound fails at this scale.
    let o = run(
        &["verify", "--suite", "lemma1", "--K", "1000", "--T", "20000"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("FAIL"));
}

#[test]
fn shipped_configs_parse() {
    use bertrand_core::experiments::{load_json, AuditConfig, RunConfig, SweepSpec};
    use bertrand_core::strategy::ProfileSpec;
    let dir = configs();
    for name in ["run_hedge_defector.json", "run_custom_exact.json"] {
        let cfg: RunConfig = load_json(&dir.join(name)).unwrap();
        cfg.profile.build().unwrap();
    }
    for name in ["sweep_price_vs_n.json", "sweep_price_vs_m.json"] {
        let _: SweepSpec = load_json(&dir.join(name)).unwrap();
    }
    let text = std::fs::read_to_string(dir.join("audit_defection_aware.json")).unwrap();
    AuditConfig::from_json(&text, "audit").unwrap();
    for entry in std::fs::read_dir(dir.join("profiles")).unwrap() {
        let spec: ProfileSpec = load_json(&entry.unwrap().path()).unwrap();
        spec.build().unwrap();
    }
}
