use cap_trade::grid::TimeGrid;
use cap_trade::scenario::{preset, AllocationSpec, AllocationVolatility, EU_NETZERO_2050, PRESETS};
use cap_trade::simulation::sample_path;
use cap_trade::{
    equilibrium_outcomes, initial_price, minimize_social_cost, path_cost, simulate, RunningStats,
    Scenario, ScenarioFile, SimulationSettings,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(name: &str) -> Scenario {
    let mut s = Scenario::preset(name, None).unwrap();
    s.allocation = AllocationSpec::FractionOfBau {
        fraction: 0.5,
        volatility: AllocationVolatility::Neutralizing,
    };
    s
}

#[test]
fn bank_identity_holds_on_every_path() {
    for name in PRESETS {
        let s = small(name);
        let alloc = s.allocation_program().unwrap();
        let e = simulate(&s.economy, &alloc, &SimulationSettings::new(400, 64, 3)).unwrap();
        let scale = s.aggregates.zero_price_emission_rate() * s.economy.horizon;
        assert!(e.max_bank_identity_error() <= 1e-9 * scale, "{name}: {}", e.max_bank_identity_error());
    }
}

#[test]
fn random_perturbations_never_beat_the_optimal_controls() {
    let s = small("heterogeneous-three");
    let alloc = s.allocation_program().unwrap();
    let settings = SimulationSettings {
        antithetic: true,
        ..SimulationSettings::new(200, 400, 11)
    };
    let grid = TimeGrid::new(s.economy.horizon, settings.steps).unwrap();
    let paths: Vec<_> = (0..settings.paths)
        .map(|j| sample_path(&s.economy, &alloc, &settings, &grid, j).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let firm_index = trial % s.economy.n_firms();
        let firm = &s.economy.firms[firm_index];
        let (amplitude, frequency) = (0.05 + (rng.next_u32() % 100) as f64 / 100.0, 1 + rng.next_u32() % 5);
        let channel = rng.next_u32() % 3;
        let mut gain = RunningStats::default();
        for path in &paths {
            let fp = &path.firms[firm_index];
            let mut c = fp.controls.clone();
            let rates = match channel {
                0 => &mut c.production,
                1 => &mut c.abatement,
                _ => &mut c.trade_rate,
            };
            for (k, r) in rates.iter_mut().enumerate() {
                let t = grid.node(k) / grid.horizon;
                *r += amplitude * (1.0 + (std::f64::consts::TAU * frequency as f64 * t).sin());
            }
            let base = path_cost(firm, &grid, s.economy.lambda, fp.inputs(), &fp.controls).unwrap().total();
            let moved = path_cost(firm, &grid, s.economy.lambda, fp.inputs(), &c).unwrap().total();
            gain.push(moved - base);
        }
        let est = gain.estimate();
        assert!(est.mean >= -3.0 * est.std_error, "trial {trial}: {} ± {}", est.mean, est.std_error);
    }
}

#[test]
fn net_zero_allocation_prices_at_net_zero() {
    let s = Scenario::preset(EU_NETZERO_2050, Some(3)).unwrap();
    let alloc = s.allocation_program().unwrap();
    let p_net = s.net_zero_price().unwrap();
    let spec = s.require_regulator().unwrap();
    let outcomes = equilibrium_outcomes(&spec, p_net);
    assert!(outcomes.mu_star_t.abs() <= 1e-9 * s.aggregates.zero_price_emission_rate());
    let p0 = initial_price(&s.aggregates, alloc.m_bar_0(), s.economy.horizon, s.economy.lambda);
    assert!((p0 - p_net).abs() <= 1e-9 * p_net);
    let p_star = minimize_social_cost(&spec).unwrap().p_star;
    assert!(p_star < p_net && p_star > 0.95 * p_net);
}

#[test]
fn scenario_files_round_trip() {
    for name in PRESETS {
        let file = preset(name, None).unwrap();
        let direct = Scenario::from_file(file.clone()).unwrap();
        let text = serde_json::to_string_pretty(&file).unwrap();
        let parsed = Scenario::from_json(&text).unwrap();
        assert_eq!(direct.hash, parsed.hash, "{name}");
        assert_eq!(direct.economy, parsed.economy);
        let back: ScenarioFile = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }
}

#[test]
fn preset_references_expand_like_the_preset() {
    let by_name = Scenario::from_json(r#"{"preset": "two-firm-symmetric"}"#).unwrap();
    let direct = Scenario::preset("two-firm-symmetric", None).unwrap();
    assert_eq!(by_name.economy, direct.economy);
    assert_eq!(by_name.hash, direct.hash);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(Scenario::from_json(r#"{"preset": "two-firm-symmetric", "colour": 1}"#).is_err());
    assert!(Scenario::from_json(r#"{"preset": "two-firm-symmetric", "economy": {"horizon": 5, "lambda": 1, "x": 0}}"#).is_err());
}
