use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use robust_sos::experiment::{read_results_csv, ExperimentConfig, AUDIT_SCHEMA, RESULTS_SCHEMA};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust-sos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn invalid_eps_exits_with_one() {
    let out = run(&["estimate", "--eps", "0.9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eps"));
}

#[test]
fn unknown_flag_and_adversary_exit_with_one() {
    assert_eq!(run(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--adversary", "nobody"]).status.code(), Some(1));
}

#[test]
fn clean_estimate_matches_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = run(&["estimate", "--eps", "0", "--n", "60", "--d", "2", "--seed", "3", "--stage", "one", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    let err = r["errors"]["mean_err"].as_f64().unwrap();
    // CLT scale of the sample mean itself
    assert!(err <= 3.0 * (2.0f64 / 60.0).sqrt(), "mean_err {err}");
    let base = r["baseline"]["sample_mean_err"].as_f64().unwrap();
    assert!((err - base).abs() < 1e-3);
    assert_eq!(r["config"]["n"].as_u64(), Some(60));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(read_results_csv(&csv).unwrap().len(), 1);
    let echoed = ExperimentConfig::from_json(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed.seed, 3);
}

#[test]
fn corrupted_estimate_reports_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = run(&[
        "estimate", "--eps", "0.1", "--n", "40", "--d", "1", "--adversary", "far-cluster", "--stage", "one", "--trace",
        "--out", out_dir,
    ]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    let robust = r["errors"]["mean_err"].as_f64().unwrap();
    let base = r["baseline"]["sample_mean_err"].as_f64().unwrap();
    assert!(robust < base, "robust {robust} vs sample mean {base}");
    assert!(r["baseline"]["median_mean_err"].is_number());
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().count() > 1);
}

#[test]
fn sweep_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        d: 1,
        n: 20,
        eps: vec![0.05, 0.1],
        adversaries: vec!["far-cluster".into(), "sign-flip".into()],
        seed: 7,
        repeats: 2,
        max_iters: 400,
        stage: robust_sos::estimator::Stage::One,
        ..ExperimentConfig::default()
    };
    let path = dir.path().join("config.json");
    fs::write(&path, config.to_json().unwrap()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&["sweep", "--config", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let first = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("results.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with(&format!("# schema={RESULTS_SCHEMA}\n")));
    let header = text.lines().nth(1).unwrap();
    assert!(header.starts_with(
        "eps,adversary,seed,mean_err,spec_err,frob_err,tv_surrogate,base_mean_err,base_frob_err,status,iters,seconds"
    ));
    let rows = read_results_csv(&text).unwrap();
    // 2 eps × 2 adversaries × 2 seeds
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.seconds.is_none()));
    for r in rows.iter().filter(|r| r.adversary == "far-cluster" && r.eps == 0.1) {
        let e = r.errors.unwrap();
        assert!(e.mean_err < r.baseline.unwrap().sample_mean_err, "{r:?}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, ExperimentConfig::default().to_json().unwrap()).unwrap();
    let out = run(&[
        "generate", "--config", path.to_str().unwrap(), "--eps", "0.2", "--n", "12", "--d", "1", "--seed", "4",
        "--out", dir.path().join("g").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sample = dir.path().join("g/sample_far-cluster_eps0.2_seed4.csv");
    let text = fs::read_to_string(&sample).unwrap();
    assert!(text.contains("eps=0.2") && text.contains("seed=4"));

    let est = dir.path().join("e");
    let out = run(&["estimate", "--input", sample.to_str().unwrap(), "--stage", "one", "--out", est.to_str().unwrap()]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&est);
    assert_eq!(r["eps"].as_f64(), Some(0.2));
    assert_eq!(r["corrupted"].as_u64(), Some(2));
}

#[test]
fn malformed_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, r#"{"d": 2, "n": 40, "eps": [0.1], "adversaries": ["far-cluster"], "seed": 0, "colour": 1}"#).unwrap();
    let out = run(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn audit_rows_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "audit", "--n", "5000", "--d", "2", "--eps", "0.05", "--seed", "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    assert!(text.starts_with(&format!("# schema={AUDIT_SCHEMA}\n")));
    let linear: Vec<&str> = text.lines().filter(|l| l.starts_with("first-moment,")).collect();
    assert_eq!(linear.len(), 100);
    assert!(linear.iter().all(|l| l.ends_with(",true")));
    assert!(text.lines().any(|l| l == "certificate,,,yes,,"));
}

#[test]
fn tiny_audit_still_emits_rows() {
    let out = run(&["audit", "--n", "10", "--d", "1", "--eps", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("second-moment-dev,")).count(), 100);
    assert!(text.lines().any(|l| l.starts_with("certificate,")));
}
