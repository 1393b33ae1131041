use std::io::Write;
use std::path::PathBuf;

use cap_trade::model::fraction_to_percent;
use cap_trade::oracle::{
    clearing_and_martingale_check, foc_check, jensen_dominance_check, minimizer_agreement, FocSettings,
    JensenSettings, CLEARING_TOLERANCE, ORACLE_PATHS, ORACLE_STEPS,
};
use cap_trade::regulator::{sweep_cost_curves, sweep_ratio_surface, CurveVariation, RegulatorSolution};
use cap_trade::scenario::PRESETS;
use cap_trade::{
    average_inflation_rate, minimize_social_cost, simulate, solve_equilibrium, PathEnsemble, Scenario,
    VerificationReport,
};
use serde_json::{json, Value};

use crate::output::{num, opt_num, Meta, OutDir};
use crate::{Cli, Command, Failure, GlobalArgs, OUT_ENV};

const F_SAMPLES: usize = 11;
const CHECKS: [&str; 4] = ["foc", "minimizer", "ensemble", "jensen"];

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let scenario = load_scenario(&cli.global)?;
    let out = OutDir::create(output_dir(&cli.global, &scenario))?;
    let meta = Meta::new(&scenario, scenario.simulation.seed);
    match &cli.command {
        Command::Equilibrium { no_simulate } => equilibrium(&scenario, &out, &meta, !no_simulate),
        Command::Regulator {
            sweep,
            sweep_points,
            curves,
            x_max,
            x_points,
        } => regulator(&scenario, &out, &meta, sweep, *sweep_points, curves, *x_max, *x_points),
        Command::Inflation => inflation(&scenario, &out, &meta),
        Command::Calibrate => calibrate(&scenario, &out, &meta),
        Command::Simulate { inject_fault } => simulate_cmd(&scenario, &out, &meta, *inject_fault),
        Command::Verify {
            checks,
            allocations,
            inject_fault,
        } => verify(&scenario, &cli.global, &out, &meta, checks, *allocations, *inject_fault),
    }
}

fn load_scenario(args: &GlobalArgs) -> Result<Scenario, Failure> {
    let path = PathBuf::from(&args.scenario);
    let mut scenario = if path.is_file() {
        if args.n_firms.is_some() {
            return Err(Failure::Validation("--n-firms applies to presets; set n_firms in the file".into()));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        Scenario::from_json(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
    } else if PRESETS.contains(&args.scenario.as_str()) {
        Scenario::preset(&args.scenario, args.n_firms)?
    } else {
        return Err(Failure::Validation(format!(
            "scenario `{}` is neither a file nor a preset ({})",
            args.scenario,
            PRESETS.join(", ")
        )));
    };
    if let Some(seed) = args.seed {
        scenario.simulation.seed = seed;
    }
    if let Some(paths) = args.paths {
        scenario.simulation.paths = paths;
    }
    if let Some(steps) = args.steps {
        scenario.simulation.steps = steps;
    }
    scenario.simulation.validate()?;
    Ok(scenario)
}

fn output_dir(args: &GlobalArgs, scenario: &Scenario) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| scenario.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cap-trade-out"))
}

fn ensemble_summary(e: &PathEnsemble) -> Value {
    json!({
        "paths": e.n_paths,
        "steps": e.grid.steps,
        "antithetic": e.antithetic,
        "p0": e.p0,
        "terminal_price": e.terminal_price(),
        "emission_rate": e.emission_rate(),
        "max_clearing_residual": e.max_clearing_residual(),
        "relative_clearing_residual": e.relative_clearing_residual(),
        "max_quadratic_variation": e.max_quadratic_variation(),
        "max_truncation": e.max_truncation(),
        "max_bank_identity_error": e.max_bank_identity_error(),
        "martingale_z_scores": e.martingale_z_scores(10),
        "integrability": e.integrability,
        "warnings": e.warnings,
    })
}

fn write_ensemble(out: &OutDir, meta: &Meta, e: &PathEnsemble) -> Result<PathBuf, Failure> {
    out.csv("ensemble.csv", meta, |w| Ok(e.write_csv(w)?))
}

fn equilibrium(s: &Scenario, out: &OutDir, meta: &Meta, with_simulation: bool) -> Result<(), Failure> {
    let alloc = s.allocation_program()?;
    let solution = solve_equilibrium(&s.economy, &alloc)?;
    let mut body = json!({
        "p0": solution.p0,
        "m_bar_0": solution.m_bar_0,
        "allocation_sensitivity": solution.allocation_sensitivity,
        "price_sensitivity": solution.price_sensitivity,
        "expected_emission_rate": solution.expected_emission_rate,
        "f_samples": solution.f_samples(F_SAMPLES),
        "controls": solution.controls,
    });
    if with_simulation {
        let ensemble = simulate(&s.economy, &alloc, &s.simulation)?;
        write_ensemble(out, meta, &ensemble)?;
        body["ensemble"] = ensemble_summary(&ensemble);
    }
    let path = out.json("equilibrium.json", meta, body)?;
    println!("P0 = {:.6} €/tCO2; wrote {}", solution.p0, path.display());
    Ok(())
}

fn simulate_cmd(s: &Scenario, out: &OutDir, meta: &Meta, fault: f64) -> Result<(), Failure> {
    let alloc = s.allocation_program()?;
    let mut settings = s.simulation;
    settings.price_volatility_scale = fault;
    let ensemble = simulate(&s.economy, &alloc, &settings)?;
    write_ensemble(out, meta, &ensemble)?;
    let path = out.json("ensemble.json", meta, json!({ "ensemble": ensemble_summary(&ensemble) }))?;
    let p = ensemble.terminal_price();
    println!(
        "E[P_T] = {:.6} ± {:.6} (P0 = {:.6}); wrote {}",
        p.mean,
        p.std_error,
        ensemble.p0,
        path.display()
    );
    Ok(())
}

fn solution_json(solution: &RegulatorSolution) -> Value {
    json!({
        "p_star": solution.p_star,
        "m_bar_star_0": solution.m_bar_star_0,
        "mu_star_t": solution.outcomes.mu_star_t,
        "pi_hat_t": solution.outcomes.pi_hat_t,
        "i_star_t_percent": fraction_to_percent(solution.outcomes.i_star_t),
        "social_cost": solution.cost,
        "method": solution.method,
    })
}

/// `1/50`, `50`, `1e-2`.
fn parse_factor(text: &str) -> Option<f64> {
    let value = match text.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => text.trim().parse().ok()?,
    };
    (value.is_finite() && value > 0.0).then_some(value)
}

/// `ymu=1/50..50` into the axis name and `points` log-spaced factors.
fn parse_sweep(text: &str, points: usize) -> Result<(String, Vec<f64>), Failure> {
    let bad = || Failure::Validation(format!("--sweep expects ymu=<lo>..<hi> or ypi=<lo>..<hi>, got `{text}`"));
    let (name, range) = text.split_once('=').ok_or_else(bad)?;
    let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
    let (lo, hi) = (parse_factor(lo).ok_or_else(bad)?, parse_factor(hi).ok_or_else(bad)?);
    let name = name.trim();
    if !matches!(name, "ymu" | "ypi") || lo > hi {
        return Err(bad());
    }
    if points < 2 || lo == hi {
        return Ok((name.into(), vec![lo]));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let factors = (0..points)
        .map(|j| (a + (b - a) * j as f64 / (points - 1) as f64).exp())
        .collect();
    Ok((name.into(), factors))
}

#[allow(clippy::too_many_arguments)]
fn regulator(
    s: &Scenario,
    out: &OutDir,
    meta: &Meta,
    sweep: &[String],
    sweep_points: usize,
    curves: &[String],
    x_max: Option<f64>,
    x_points: usize,
) -> Result<(), Failure> {
    let spec = s.require_regulator()?;
    let solution = minimize_social_cost(&spec)?;
    let mut body = solution_json(&solution);
    body["net_zero_price"] = json!(s.net_zero_price()?);

    if !sweep.is_empty() {
        let (y_mu, y_pi) = spec
            .emission_penalty
            .quadratic_weight()
            .zip(spec.inflation_penalty.quadratic_weight())
            .ok_or_else(|| Failure::Validation("--sweep needs quadratic penalties".into()))?;
        let (mut mu_factors, mut pi_factors) = (vec![1.0], vec![1.0]);
        for axis in sweep {
            let (name, factors) = parse_sweep(axis, sweep_points)?;
            if name == "ymu" {
                mu_factors = factors;
            } else {
                pi_factors = factors;
            }
        }
        let mu_grid: Vec<f64> = mu_factors.iter().map(|f| f * y_mu).collect();
        let pi_grid: Vec<f64> = pi_factors.iter().map(|f| f * y_pi).collect();
        let rows = sweep_ratio_surface(&spec, &mu_grid, &pi_grid)?;
        let path = out.csv("ratio_surface.csv", meta, |w| {
            writeln!(w, "y_mu,y_pi,p_star,s_mu,s_pi,ratio")?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    num(r.y_mu),
                    num(r.y_pi),
                    num(r.p_star),
                    num(r.s_mu),
                    num(r.s_pi),
                    opt_num(r.ratio)
                )?;
            }
            Ok(())
        })?;
        body["ratio_surface"] = json!({ "file": path.file_name().map(|n| n.to_string_lossy()), "cells": rows.len() });
    }

    if !curves.is_empty() {
        let variations = curves
            .iter()
            .map(|c| CurveVariation::parse(c))
            .collect::<cap_trade::Result<Vec<_>>>()?;
        let hi = x_max.unwrap_or(2.0 * s.net_zero_price()?);
        if !(hi.is_finite() && hi > 0.0) || x_points < 2 {
            return Err(Failure::Validation("--x-max must be positive and --x-points at least 2".into()));
        }
        let x: Vec<f64> = (0..x_points).map(|j| hi * j as f64 / (x_points - 1) as f64).collect();
        let curves = sweep_cost_curves(&spec, &x, &variations)?;
        let path = out.csv("cost_curves.csv", meta, |w| {
            write!(w, "x,s_reference")?;
            for (label, _) in &curves.variants {
                write!(w, ",s_{label}")?;
            }
            writeln!(w)?;
            for (j, x) in curves.x.iter().enumerate() {
                write!(w, "{},{}", num(*x), num(curves.reference[j]))?;
                for (_, values) in &curves.variants {
                    write!(w, ",{}", num(values[j]))?;
                }
                writeln!(w)?;
            }
            Ok(())
        })?;
        let argmins: serde_json::Map<String, Value> = std::iter::once(("reference".to_string(), &curves.reference))
            .chain(curves.variants.iter().map(|(l, v)| (l.clone(), v)))
            .map(|(label, values)| (label, json!(cap_trade::regulator::CostCurves::argmin(values, &curves.x))))
            .collect();
        body["cost_curves"] = json!({ "file": path.file_name().map(|n| n.to_string_lossy()), "argmin": argmins });
    }

    let path = out.json("regulator.json", meta, body)?;
    println!(
        "P* = {:.6} €/tCO2, M*0 = {:.6e} tCO2; wrote {}",
        solution.p_star,
        solution.m_bar_star_0,
        path.display()
    );
    Ok(())
}

fn inflation(s: &Scenario, out: &OutDir, meta: &Meta) -> Result<(), Failure> {
    let horizon = s.economy.horizon;
    let pass_through = s.basket.pass_through(horizon)?;
    let alloc = s.allocation_program()?;
    let p0 = solve_equilibrium(&s.economy, &alloc)?.p0;
    let p_net = s.net_zero_price()?;
    let rate = |p: f64| -> Result<f64, Failure> { Ok(fraction_to_percent(average_inflation_rate(&s.basket, p, horizon)?)) };
    let mut body = json!({
        "pass_through_percent_per_price": fraction_to_percent(pass_through),
        "omega_bar": s.basket.omega_bar,
        "pi_b": s.basket.pi_b,
        "calibrated": s.basket.omega_eff.is_some(),
        "p0": p0,
        "inflation_at_p0_percent": rate(p0)?,
        "net_zero_price": p_net,
        "inflation_at_net_zero_percent": rate(p_net)?,
    });
    if let Some(spec) = s.regulator_spec() {
        let p_star = minimize_social_cost(&spec?)?.p_star;
        body["p_star"] = json!(p_star);
        body["inflation_at_p_star_percent"] = json!(rate(p_star)?);
    }
    let path = out.json("inflation.json", meta, body)?;
    println!("I = {:.6} %/y at P0 = {:.6}; wrote {}", rate(p0)?, p0, path.display());
    Ok(())
}

fn calibrate(s: &Scenario, out: &OutDir, meta: &Meta) -> Result<(), Failure> {
    let inputs = s
        .calibration
        .ok_or_else(|| Failure::Validation("calibration: section is required for this command".into()))?;
    let c = inputs.calibrate()?;
    let body = json!({
        "inputs": inputs,
        "phi_bar": c.phi_bar,
        "lambda": c.lambda,
        "y_pi": c.y_pi,
        "omega_eff_percent": fraction_to_percent(c.omega_eff),
        "horizon": c.horizon,
        "two_lambda_phi_bar": 2.0 * c.lambda * c.phi_bar,
    });
    let path = out.json("calibration.json", meta, body)?;
    println!("phi_bar = {:e}, lambda = {:e}; wrote {}", c.phi_bar, c.lambda, path.display());
    Ok(())
}

fn verify(
    s: &Scenario,
    args: &GlobalArgs,
    out: &OutDir,
    meta: &Meta,
    checks: &[String],
    allocations: usize,
    fault: f64,
) -> Result<(), Failure> {
    let selected: Vec<&str> = if checks.is_empty() {
        CHECKS.to_vec()
    } else {
        checks.iter().map(|c| c.trim()).collect()
    };
    if let Some(bad) = selected.iter().find(|c| !CHECKS.contains(c)) {
        return Err(Failure::Validation(format!("unknown check `{bad}` (known: {})", CHECKS.join(", "))));
    }
    let seed = s.simulation.seed;
    let steps = args.steps.unwrap_or(ORACLE_STEPS);
    let paths = args.paths.unwrap_or(ORACLE_PATHS);
    let alloc = s.allocation_program()?;
    let mut reports: Vec<VerificationReport> = Vec::new();
    let mut skipped = Vec::new();
    for check in &selected {
        let report = match *check {
            "foc" => foc_check(
                &s.economy,
                &alloc,
                &FocSettings {
                    steps,
                    paths,
                    seed,
                    ..FocSettings::default()
                },
            )?,
            "minimizer" => match s.regulator_spec() {
                Some(spec) => minimizer_agreement(&spec?)?,
                None => {
                    skipped.push("minimizer: scenario has no regulator section");
                    continue;
                }
            },
            "ensemble" => {
                let mut settings = s.simulation;
                settings.price_volatility_scale = fault;
                let ensemble = simulate(&s.economy, &alloc, &settings)?;
                clearing_and_martingale_check(&ensemble, CLEARING_TOLERANCE, 10)
            }
            "jensen" => match s.regulator_spec() {
                Some(spec) => jensen_dominance_check(
                    &s.economy,
                    &spec?,
                    &JensenSettings {
                        allocations,
                        steps,
                        paths,
                        seed,
                        ..JensenSettings::default()
                    },
                )?,
                None => {
                    skipped.push("jensen: scenario has no regulator section");
                    continue;
                }
            },
            _ => unreachable!(),
        };
        println!("{} {}", if report.passed { "PASS" } else { "FAIL" }, report.check);
        reports.push(report.with_hash(&s.hash));
    }
    let passed = reports.iter().all(|r| r.passed);
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.check.clone()).collect();
    let body = json!({ "passed": passed, "skipped": skipped, "reports": reports });
    let path = out.json("verify.json", meta, body)?;
    println!("wrote {}", path.display());
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")))
    }
}
