use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cache() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("gkdv-cache")
}

fn gkdv(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gkdv"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn with_cache(body: &str) -> String {
    let cache = serde_json::to_string(&cache()).unwrap();
    if body.is_empty() {
        format!("{{\"cache_dir\": {cache}}}")
    } else {
        format!("{{\"cache_dir\": {cache}, {body}}}")
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [r#"{"p": 1}"#, r#"{"grid": {"L": 10, "n": 100}}"#, r#"{"nope": 0}"#, "{"] {
        let out = gkdv(&["profile"], Some(bad), dir.path());
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
    let narrow = gkdv(&["profile"], Some(r#"{"grid": {"L": 16, "n": 256}}"#), dir.path());
    assert_eq!(narrow.status.code(), Some(2));
    let missing = Command::new(env!("CARGO_BIN_EXE_gkdv"))
        .args(["profile", "--config", "/nonexistent.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let unknown = Command::new(env!("CARGO_BIN_EXE_gkdv")).arg("plot").output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn subcritical_spectrum_exits_3_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_cache(r#""p": 4, "spectrum_grid": {"L": 40, "n": 256}"#);
    let out = gkdv(&["spectrum"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(3));
    let diag = std::fs::read_to_string(dir.path().join("out/diagnostic.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&diag).unwrap();
    assert_eq!(v["command"], "spectrum");
    assert!(v["error"].as_str().unwrap().contains("no positive real eigenvalue"));
}

#[test]
fn profile_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"ensemble": [{"c": 0.7, "x0": 0}, {"c": 1.3, "x0": 10}], "grid": {"L": 128, "n": 1024}}"#;
    let out = gkdv(&["profile"], Some(cfg), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("out/profile_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let table = std::fs::read_to_string(dir.path().join("out/profile_c1.3.csv")).unwrap();
    assert_eq!(table.lines().count(), 1025);
    assert!(table.starts_with("x,Q,Q_x,Q_xx"));
}

#[test]
fn spectrum_and_coercivity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_cache(r#""coercivity_grid": {"L": 48, "n": 256}"#);
    let out = gkdv(&["spectrum"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/spectrum.json")).unwrap()).unwrap();
    let e0 = report["e0"].as_f64().unwrap();
    assert!((e0 - 0.63450764348).abs() < 1e-8, "{e0}");
    let out = gkdv(&["coercivity"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("out/coercivity.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let (lambda, probe): (f64, f64) = (r[2].parse().unwrap(), r[4].parse().unwrap());
        assert!(probe >= lambda - 1e-6, "{r:?}");
    }
    let full = rows.iter().find(|r| r[1] == "unstable+kernel" && r[3] == "256").unwrap();
    assert!(full[2].parse::<f64>().unwrap() > 0.0);
    let kernel = rows.iter().find(|r| r[1] == "kernel").unwrap();
    assert!(kernel[2].parse::<f64>().unwrap() < 0.0);
}

#[test]
fn evolve_is_deterministic() {
    let cfg = r#"{"grid": {"L": 64, "n": 1024}, "ensemble": [{"c": 1, "x0": 0}], "evolve_span": {"t_start": 0, "t_end": 0.1}, "evolver": {"record_every": 100}}"#;
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = gkdv(&["evolve"], Some(cfg), dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let traj = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
        let names: Vec<String> = traj.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect();
        for n in &names {
            assert!(dir.path().join("out/snapshots").join(n).exists());
        }
        assert!(dir.path().join("out/config.resolved.json").exists());
        traj
    };
    let a = run();
    assert!(a.lines().count() >= 3);
    assert_eq!(a, run());
}

#[test]
fn construct_single_soliton_short_window() {
    let cfg = with_cache(
        r#""window": {"length": 2}, "evolver": {"dealias": false}, "shooting": {"ball_multiple": 0.5}"#,
    );
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = gkdv(&["construct", "--threads", "2"], Some(&cfg), dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let result: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/result.json")).unwrap()).unwrap();
        assert_eq!(result["success"], true);
        let t0 = result["tube"]["t0"].as_f64().unwrap();
        assert_eq!(result["t_exit"].as_f64().unwrap(), t0);
        let resolved: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/config.resolved.json")).unwrap()).unwrap();
        assert_eq!(resolved["window"]["T0"].as_f64().unwrap(), t0);
        assert!(dir.path().join("out/u_end.snap").exists());
        std::fs::read(dir.path().join("out/series.csv")).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
}
