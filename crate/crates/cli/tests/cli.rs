use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fbm_drift::basis::{psi_closed_poly, DriftBasis, Sigma};
use fbm_drift::fbm::{observation_from_sampler, FbmSampler, RngSeed, SimMethod};
use fbm_drift::hurst::{HurstModel, TimeGrid};
use fbm_drift::mle::mle_estimate;
use fbm_drift::transform::martingale_transform;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fbmdrift"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

const SIM: &str = r#"{"model": {"H": 0.3, "sigma": 0.5, "T": 1, "N": 128},
 "basis": {"kind": "polynomial", "degree": 2}, "truth": {"theta": [0.5, 1.0, -2.0]}, "seed": 11}"#;

#[test]
fn simulate_is_deterministic_and_seed_overridable() {
    let d = TempDir::new().unwrap();
    write(d.path(), "sim.json", SIM);
    for out in ["a", "b"] {
        let o = run(d.path(), &["simulate", "--config", "sim.json", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("increments: n=128"));
    }
    let a = fs::read(d.path().join("a/path.csv")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b/path.csv")).unwrap());
    let o = run(d.path(), &["simulate", "--config", "sim.json", "--out", "c", "--seed", "12"]);
    assert!(o.status.success());
    assert_ne!(a, fs::read(d.path().join("c/path.csv")).unwrap());
    let o = run(d.path(), &["simulate", "--config", "sim.json", "--out", "e", "--seed", "11"]);
    assert!(o.status.success());
    assert_eq!(a, fs::read(d.path().join("e/path.csv")).unwrap());
}

#[test]
fn json_format_writes_columns() {
    let d = TempDir::new().unwrap();
    write(d.path(), "sim.json", SIM);
    let o = run(d.path(), &["simulate", "--config", "sim.json", "--out", "j", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("j/path.json")).unwrap()).unwrap();
    assert_eq!(v["t"].as_array().unwrap().len(), 129);
}

#[test]
fn tiny_sigma_round_trip_recovers_theta() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "sim.json",
        r#"{"model": {"H": 0.3, "sigma": 1e-8, "T": 1, "N": 256},
 "basis": {"kind": "polynomial", "degree": 2}, "truth": {"theta": [0.5, 1.0, -2.0]}, "seed": 7}"#,
    );
    write(
        d.path(),
        "est.json",
        r#"{"model": {"H": 0.3, "sigma": 1e-8, "T": 1, "N": 256},
 "basis": {"kind": "polynomial", "degree": 2}, "options": {"input": "o/path.csv"}}"#,
    );
    assert!(run(d.path(), &["simulate", "--config", "sim.json", "--out", "o"]).status.success());
    let o = run(d.path(), &["estimate-ml", "--config", "est.json", "--out", "e"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("theta_hat = "));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("e/summary.json")).unwrap()).unwrap();
    let th: Vec<f64> = v["theta_hat"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (got, want) in th.iter().zip([0.5, 1.0, -2.0]) {
        assert!((got - want).abs() <= 1e-4, "{th:?}");
    }
}

#[test]
fn file_pipeline_matches_in_process_pipeline() {
    let d = TempDir::new().unwrap();
    write(d.path(), "sim.json", SIM);
    write(
        d.path(),
        "est.json",
        r#"{"model": {"H": 0.3, "sigma": 0.5, "T": 1, "N": 128},
 "basis": {"kind": "polynomial", "degree": 2}, "options": {"input": "o/path.csv"}}"#,
    );
    assert!(run(d.path(), &["simulate", "--config", "sim.json", "--out", "o"]).status.success());
    assert!(run(d.path(), &["transform", "--config", "est.json", "--out", "t"]).status.success());
    assert!(run(d.path(), &["estimate-ml", "--config", "est.json", "--out", "f"]).status.success());
    // estimate-ml without an input simulates the same path in process
    assert!(run(d.path(), &["estimate-ml", "--config", "sim.json", "--out", "p"]).status.success());
    assert_eq!(
        fs::read(d.path().join("f/summary.json")).unwrap(),
        fs::read(d.path().join("p/summary.json")).unwrap()
    );
    assert_eq!(
        fs::read(d.path().join("f/trajectory.csv")).unwrap(),
        fs::read(d.path().join("p/trajectory.csv")).unwrap()
    );

    // and both agree with the library called directly
    let m = HurstModel::new(0.3).unwrap();
    let g = TimeGrid::uniform(1.0, 128).unwrap();
    let basis = DriftBasis::polynomial(2, Sigma::Constant(0.5));
    let sampler = FbmSampler::new(&m, &g, SimMethod::Cholesky).unwrap();
    let xi = observation_from_sampler(&[0.5, 1.0, -2.0], &basis, &sampler, RngSeed::new(11, 0)).unwrap();
    assert_eq!(fs::read_to_string(d.path().join("o/path.csv")).unwrap(), xi.to_csv());
    let mp = martingale_transform(&xi, &basis.sigma, &m).unwrap();
    assert_eq!(fs::read_to_string(d.path().join("t/martingale.csv")).unwrap(), mp.to_csv());
    let est = mle_estimate(&psi_closed_poly(&m, &basis, &g).unwrap(), &mp, 1.0).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("f/summary.json")).unwrap()).unwrap();
    let th: Vec<f64> = v["theta_hat"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(th, est.theta_hat);
}

#[test]
fn config_errors_exit_2_and_name_the_path() {
    let d = TempDir::new().unwrap();
    write(d.path(), "unknown.json", r#"{"model": {"H": 0.3, "sigma": 1, "T": 1, "N": 8, "hurst": 1}}"#);
    let o = run(d.path(), &["simulate", "--config", "unknown.json", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`model.hurst`"));
    assert!(!d.path().join("x").exists());

    write(
        d.path(),
        "range.json",
        r#"{"model": {"H": 1.5, "sigma": 1, "T": 1, "N": 8}, "basis": {"kind": "polynomial", "degree": 1}, "truth": {"theta": [0, 1]}, "seed": 1}"#,
    );
    let o = run(d.path(), &["simulate", "--config", "range.json", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`model.H`"));

    write(
        d.path(),
        "noseed.json",
        r#"{"model": {"H": 0.5, "sigma": 1, "T": 1, "N": 8}, "basis": {"kind": "polynomial", "degree": 1}, "truth": {"theta": [0, 1]}}"#,
    );
    let o = run(d.path(), &["simulate", "--config", "noseed.json", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`seed`"));
    assert!(!d.path().join("x").exists());

    let o = run(d.path(), &["simulate", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cost_curve_writes_curve_and_minimizer() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "fig.json",
        r#"{"model": {"H": 0.2, "sigma": 1, "T": 25, "N": 500}, "basis": {"kind": "polynomial", "degree": 2},
 "prior": {"normal": {"m": [0, 0, 0], "Sigma": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}}, "c": 0.02}"#,
    );
    let o = run(d.path(), &["cost-curve", "--config", "fig.json", "--out", "f"]);
    assert!(o.status.success());
    let curve = fs::read_to_string(d.path().join("f/F_curve.csv")).unwrap();
    assert!(curve.starts_with("t,F\n"));
    assert_eq!(curve.lines().count(), 502);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("f/summary.json")).unwrap()).unwrap();
    assert_eq!(v["unique_interior_minimum"], true);
    let o = run(d.path(), &["stop-normal", "--config", "fig.json", "--out", "s"]);
    assert!(o.status.success());
}

#[test]
fn bayes_and_stopping_commands() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "u.json",
        r#"{"model": {"H": 0.3, "sigma": 0.5, "T": 1, "N": 64}, "basis": {"kind": "polynomial", "degree": 1},
 "truth": {"theta": [0, 1]}, "seed": 3, "prior": {"uniform": {"a": [0], "b": [2]}}, "c": 0.05}"#,
    );
    for cmd in ["estimate-bayes", "oracle-check", "stop-uniform"] {
        let o = run(d.path(), &[cmd, "--config", "u.json", "--out", cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let policy = fs::read_to_string(d.path().join("stop-uniform/policy.csv")).unwrap();
    assert!(policy.starts_with("t,M,action\n"));
    write(
        d.path(),
        "n.json",
        r#"{"model": {"H": 0.3, "sigma": 0.5, "T": 1, "N": 64}, "basis": {"kind": "polynomial", "degree": 2},
 "truth": {"theta": [0.2, 1, 0.5]}, "seed": 3, "prior": {"normal": {"m": [0, 0, 0], "Sigma": [[1, 0, 0], [0, 1, 0.2], [0, 0.2, 1]]}}}"#,
    );
    for cmd in ["estimate-bayes", "oracle-check"] {
        let o = run(d.path(), &[cmd, "--config", "n.json", "--out", cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("estimate-bayes/posterior.json")).unwrap()).unwrap();
    assert_eq!(v["mean"][0], 0.2);
    let o = run(
        d.path(),
        &["stop-uniform", "--config", "n.json", "--out", "bad"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mc_report_is_invariant_to_worker_count() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "mc.json",
        r#"{"model": {"H": 0.2, "sigma": 1, "T": 1, "N": 64}, "basis": {"kind": "polynomial", "degree": 1},
 "truth": {"theta": [0, 1]}, "seed": 5, "options": {"replications": 100, "scenario": "n1"}}"#,
    );
    let a = bin()
        .current_dir(d.path())
        .args(["mc", "--config", "mc.json", "--out", "a"])
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .unwrap();
    let b = bin()
        .current_dir(d.path())
        .args(["mc", "--config", "mc.json", "--out", "b"])
        .env("RAYON_NUM_THREADS", "4")
        .output()
        .unwrap();
    assert!(a.status.success() && b.status.success());
    let ra = fs::read(d.path().join("a/report.csv")).unwrap();
    assert_eq!(ra, fs::read(d.path().join("b/report.csv")).unwrap());
    assert!(String::from_utf8_lossy(&ra).starts_with("scenario,statistic,value,se,n_reps\nn1,"));
}

#[test]
fn help_lists_every_subcommand() {
    let o = bin().arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "simulate",
        "transform",
        "estimate-ml",
        "estimate-bayes",
        "cost-curve",
        "stop-normal",
        "stop-uniform",
        "mc",
        "oracle-check",
    ] {
        assert!(text.contains(cmd), "{cmd}");
    }
    let o = bin().args(["simulate", "--help"]).output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--out", "--seed", "--format"] {
        assert!(text.contains(flag));
    }
}
