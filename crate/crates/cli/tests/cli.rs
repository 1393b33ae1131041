use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cap_trade(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cap-trade"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("CAP_TRADE_OUT")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV written by the tool, header included.
fn csv_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn equilibrium_reports_the_net_zero_price() {
    let dir = tempfile::tempdir().unwrap();
    let out = cap_trade(dir.path(), &["equilibrium", "--no-simulate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&dir.path().join("equilibrium.json"));
    assert!((doc["p0"].as_f64().unwrap() - 880.0).abs() <= 0.5);
    assert_eq!(doc["meta"]["seed"], 20500);
    assert_eq!(doc["meta"]["scenario_hash"].as_str().unwrap().len(), 64);
    assert!(!dir.path().join("ensemble.csv").exists());
}

#[test]
fn simulated_outputs_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--scenario", "two-firm-symmetric", "--paths", "64", "--steps", "100", "--seed", "9", "equilibrium"];
    assert!(cap_trade(a.path(), &args).status.success());
    assert!(cap_trade(b.path(), &args).status.success());
    for name in ["equilibrium.json", "ensemble.csv"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    let rows = csv_rows(&a.path().join("ensemble.csv"));
    assert_eq!(rows[0], "t,mean_P,se_P,mean_E,se_E,clearing_residual");
    assert_eq!(rows.len(), 102);
    let text = std::fs::read_to_string(a.path().join("ensemble.csv")).unwrap();
    assert!(text.contains("# seed=9"));
}

#[test]
fn regulator_writes_solution_and_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let out = cap_trade(
        dir.path(),
        &["regulator", "--sweep", "ymu=1/50..50", "ypi=1/50..50", "--curves", "ymu/10", "ypi*1e5", "--x-max", "1000"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&dir.path().join("regulator.json"));
    let p_star = doc["p_star"].as_f64().unwrap();
    assert!((850.0..=900.0).contains(&p_star), "{p_star}");
    let surface = csv_rows(&dir.path().join("ratio_surface.csv"));
    assert_eq!(surface[0], "y_mu,y_pi,p_star,s_mu,s_pi,ratio");
    assert_eq!(surface.len(), 26);
    let curves = csv_rows(&dir.path().join("cost_curves.csv"));
    assert_eq!(curves[0], "x,s_reference,s_ymu/10,s_ypi*1e5");
    assert_eq!(curves.len(), 1002);
    let shifted = doc["cost_curves"]["argmin"]["ymu/10"].as_f64().unwrap();
    assert!(shifted < doc["cost_curves"]["argmin"]["reference"].as_f64().unwrap());
}

#[test]
fn inflation_and_calibration_commands() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cap_trade(dir.path(), &["inflation"]).status.success());
    let doc = read_json(&dir.path().join("inflation.json"));
    assert!((doc["inflation_at_net_zero_percent"].as_f64().unwrap() - 6.6).abs() < 1e-9);
    assert!(cap_trade(dir.path(), &["calibrate"]).status.success());
    let doc = read_json(&dir.path().join("calibration.json"));
    assert_eq!(doc["phi_bar"].as_f64().unwrap(), 1.875e6);
}

#[test]
fn verify_passes_and_notices_a_wrong_price_volatility() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--scenario", "two-firm-symmetric", "--paths", "200", "--steps", "100", "verify"];
    let ok = cap_trade(dir.path(), &[&common[..], &["--checks", "foc,minimizer,ensemble"]].concat());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let doc = read_json(&dir.path().join("verify.json"));
    assert_eq!(doc["passed"], true);
    assert_eq!(doc["reports"].as_array().unwrap().len(), 3);

    let faulty = cap_trade(dir.path(), &[&common[..], &["--checks", "ensemble", "--inject-fault", "1.5"]].concat());
    assert_eq!(faulty.status.code(), Some(2));
    assert_eq!(read_json(&dir.path().join("verify.json"))["passed"], false);
}

#[test]
fn only_the_requested_checks_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = cap_trade(dir.path(), &["--scenario", "two-firm-symmetric", "--paths", "64", "--steps", "50", "verify", "--checks", "foc"]);
    assert!(out.status.success());
    let doc = read_json(&dir.path().join("verify.json"));
    assert_eq!(doc["reports"][0]["check"], "foc");
    assert_eq!(doc["reports"].as_array().unwrap().len(), 1);
    let bad = cap_trade(dir.path(), &["verify", "--checks", "astrology"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn bad_scenario_names_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    std::fs::write(&file, r#"{"preset": "two-firm-symmetric", "economy": {"horizon": 5, "lambda": 1, "lamda": 2}}"#).unwrap();
    let out = cap_trade(dir.path(), &["--scenario", file.to_str().unwrap(), "equilibrium", "--no-simulate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));

    std::fs::write(&file, r#"{"preset": "two-firm-symmetric", "economy": {"horizon": -5, "lambda": 1}}"#).unwrap();
    let out = cap_trade(dir.path(), &["--scenario", file.to_str().unwrap(), "equilibrium"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = cap_trade(&blocker.join("sub"), &["equilibrium", "--no-simulate"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cap-trade"))
        .args(["inflation"])
        .env("CAP_TRADE_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("inflation.json").exists());
}
