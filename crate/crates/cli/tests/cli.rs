use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn bsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsde")).args(args).output().unwrap()
}

fn kv(dir: &Path, key: &str) -> String {
    let body = fs::read_to_string(dir.join("report.kv")).unwrap();
    body.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from report.kv"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn verify_bundled_perfect_market_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bundled("perfect_market.json");
    let out = bsde(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for axiom in [
        "consistency",
        "zero_one_law",
        "monotonicity",
        "convexity",
        "nonnegativity",
        "no_arbitrage",
        "wealth_martingale",
    ] {
        assert_eq!(kv(tmp.path(), &format!("{axiom}_verdict")), "PASS", "{axiom}");
    }
    let csv = fs::read_to_string(tmp.path().join("suite.csv")).unwrap();
    assert!(csv.starts_with("axiom,verdict,passed,total,violations\n"));
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn counterexample_reproduces_negative_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bundled("counterexample.json");
    let out = bsde(&[
        "counterexample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let y0: f64 = kv(tmp.path(), "y0_tree").parse().unwrap();
    assert!((y0 - (1.0 - std::f64::consts::E)).abs() < 2e-2, "{y0}");
    assert_eq!(kv(tmp.path(), "verdict"), "comparison hypotheses violated: γ < -1");
    let txt = fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(txt.contains("comparison hypotheses violated"));
}

#[test]
fn missing_seed_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"grid": {"horizon": 1, "steps": 10}, "intensity": {"kind": "constant", "rate": 1},
            "driver": {"kind": "zero"}, "claim": {"kind": "default_indicator"}, "method": "lsmc", "paths": 1000}"#,
    );
    let out = bsde(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(cfg.to_str().unwrap()) && err.contains("seed"), "{err}");
}

#[test]
fn malformed_field_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"grid": {"horizon": "one", "steps": 10}}"#);
    let out = bsde(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("grid.horizon"), "{err}");
    let cfg = write_config(tmp.path(), r#"{"grid": {"horizon": 1, "steps": 10}, "colour": 1}"#);
    let out = bsde(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn picard_breakdown_exits_with_numerical_code() {
    let tmp = tempfile::tempdir().unwrap();
    // the declared constant understates the driver's slope in y
    let cfg = write_config(
        tmp.path(),
        r#"{"grid": {"horizon": 1, "steps": 4}, "intensity": {"kind": "constant", "rate": 1},
            "driver": {"kind": "custom", "expr": "40*y", "lambda_constant": 1},
            "claim": {"kind": "constant", "value": 1}}"#,
    );
    let out = bsde(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"grid": {"horizon": 1, "steps": 10}, "intensity": {"kind": "constant", "rate": 0.8},
            "market": {"r": 0.02, "sigma1": 0.2, "sigma2": 0.3, "theta1": 0.2, "theta2": 0.5},
            "claim": {"kind": "put", "asset": "s1", "strike": 1.0}, "method": "lsmc", "paths": 20000, "seed": "0x1f"}"#,
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let out = bsde(&[
            "price",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["report.kv", "price.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(kv(&a, "seed"), "31");
    assert_eq!(kv(&a, "version"), env!("CARGO_PKG_VERSION"));
    assert_eq!(kv(&a, "config_hash").len(), 64);
    let override_seed = tmp.path().join("c");
    bsde(&[
        "price",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        override_seed.to_str().unwrap(),
    ]);
    assert_eq!(kv(&override_seed, "seed"), "5");
}

#[test]
fn simulate_hedge_and_solve_write_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bundled("perfect_market.json");
    let c = cfg.to_str().unwrap();
    let dir = |s: &str| tmp.path().join(s);
    let out = bsde(&["hedge", "--config", c, "--out", dir("h").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let err: f64 = kv(&dir("h"), "tree_replication_max_abs").parse().unwrap();
    assert!(err < 1e-10);
    let hedge = fs::read_to_string(dir("h").join("hedge.csv")).unwrap();
    assert!(hedge.starts_with("step,node,t,phi1,phi2\n"));
    let price = fs::read_to_string(dir("h").join("price.csv")).unwrap();
    assert!(price.starts_with("t,price,Z,K,phi1,phi2\n"));
    assert!(!price.contains('\r'));

    let sim = write_config(
        tmp.path(),
        r#"{"grid": {"horizon": 1, "steps": 5}, "intensity": {"kind": "constant", "rate": 1}, "paths": 50, "seed": 3}"#,
    );
    let out = bsde(&[
        "simulate",
        "--config",
        sim.to_str().unwrap(),
        "--out",
        dir("s").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(kv(&dir("s"), "paths"), "50");
    assert!(dir("s").join("paths.csv").exists());

    let out = bsde(&["solve", "--config", c, "--out", dir("v").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let y0: f64 = kv(&dir("v"), "y0").parse().unwrap();
    let p: f64 = kv(&dir("h"), "price").parse().unwrap();
    assert_eq!(y0, p);
}
