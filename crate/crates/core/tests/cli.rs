use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn herdlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_herdlab"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("HERDLAB_THREADS")
        .output()
        .unwrap()
}

fn report(dir: &Path, stem: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json"))).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_spiral_reaches_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("spiral_two.json");
    let out = herdlab(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = report(dir.path(), "simulate");
    assert_eq!(rep["status"], "ok");
    for e in rep["results"]["final"].as_array().unwrap() {
        assert!((e["r"].as_f64().unwrap() - 0.4458).abs() < 1e-3, "{e}");
    }
    assert_eq!(rep["config_hash"].as_str().unwrap().len(), 64);

    let csv = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3 + 4 * 2);
    assert_eq!(&header[..5], &["t", "x_p", "y_p", "x_e0", "y_e0"]);
    let mut prev = f64::NEG_INFINITY;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), header.len());
        assert!(cols[0] > prev);
        prev = cols[0];
    }
}

#[test]
fn embedded_config_reproduces_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = scenario("spiral_single_fast.json");
    assert_eq!(herdlab(&["simulate", "--config", cfg.to_str().unwrap()], a.path()).status.code(), Some(0));
    let rep = report(a.path(), "simulate");
    let embedded = write_config(a.path(), &serde_json::to_string(&rep["config"]).unwrap());
    assert_eq!(herdlab(&["simulate", "--config", embedded.to_str().unwrap()], b.path()).status.code(), Some(0));
    let first = fs::read(a.path().join("simulate.csv")).unwrap();
    let second = fs::read(b.path().join("simulate.csv")).unwrap();
    assert!(first == second);
    assert_eq!(rep["config_hash"], report(b.path(), "simulate")["config_hash"]);
}

#[test]
fn equilibria_reports_circular_roots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("circular_equilibria.json");
    let out = herdlab(&["equilibria", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let res = &report(dir.path(), "equilibria")["results"];
    // r^3 - R^2 r + k/omega with k = 1, R = 2, omega = 1
    let cubic = |r: f64| r * r * r - 4.0 * r + 1.0;
    for key in ["r_s1", "r_s2"] {
        assert!(cubic(res[key].as_f64().unwrap()).abs() < 1e-10);
    }
    assert!(res["r_s1"].as_f64().unwrap() > 2.0 / 3f64.sqrt());
    assert!((res["r_s2"].as_f64().unwrap() - 0.2541).abs() < 5e-4);
}

#[test]
fn coincident_start_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"mode": "circular", "k": 1.0, "R": 2.0, "omega": 1.0, "evaders": [[2.0, 0.0]]}"#);
    let out = herdlab(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let rep = report(dir.path(), "simulate");
    assert_eq!(rep["status"], "error");
    assert_eq!(rep["results"]["termination"]["kind"], "singular");
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(herdlab(&["nonsense"], dir.path()).status.code(), Some(1));
    assert_eq!(herdlab(&["simulate"], dir.path()).status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    assert_eq!(herdlab(&["simulate", "--config", missing.to_str().unwrap()], dir.path()).status.code(), Some(1));

    let cfg = write_config(dir.path(), r#"{"mode": "circular", "k": 1.0, "R": 2.0, "omega": 0.0, "evaders": [[0.5, 0.0]]}"#);
    let out = herdlab(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let rep = report(dir.path(), "simulate");
    assert!(rep["error"].as_str().unwrap().contains("omega"), "{}", rep["error"]);

    let cfg = write_config(dir.path(), r#"{"mode": "circular", "k": 1.0, "R": 2.0, "omega": 1.0, "evaders": [[0.5, 0.0]], "extra": 1}"#);
    assert_eq!(herdlab(&["simulate", "--config", cfg.to_str().unwrap()], dir.path()).status.code(), Some(1));
}

#[test]
fn farthest_evader_is_reindexed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"mode": "spiral", "k": 1.0, "k1": 1.0, "R": 2.0, "omega": 5.0, "evaders": [[0.2, 0.0], [0.0, 0.9]], "integrator": {"t_end": 2.0}}"#,
    );
    let out = herdlab(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rep = report(dir.path(), "simulate");
    assert!(!rep["notices"].as_array().unwrap().is_empty());
    assert!((rep["params"]["kappa"].as_f64().unwrap() - 0.9).abs() < 1e-12);
}

#[test]
fn stability_and_roa_commands_succeed() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, file) in [("stability", "circular_equilibria.json"), ("roa", "spiral_roa.json"), ("pi-roa", "circular_pi_roa.json")] {
        let cfg = scenario(file);
        let out = herdlab(&[cmd, "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
