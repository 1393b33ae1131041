use cap_trade::oracle::grid_minimize_s;
use cap_trade::regulator::{bisect_price, closed_form_price};
use cap_trade::scenario::{Scenario, EU_NETZERO_2050};
use cap_trade::{
    basket_from_firms, calibrate_lambda, calibrate_phi, derive_aggregates, initial_price, optimal_abatement,
    optimal_production, policy_cpi_adjustment, price_sensitivity, price_volatility_f, EconomyParams, FirmParams,
    RegulatorSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn firm() -> impl Strategy<Value = FirmParams> {
    (
        5.0..20.0f64,
        0.2..2.0f64,
        0.1..0.8f64,
        0.2..2.0f64,
        0.5..2.0f64,
        0.0..1.0f64,
        0.0..3.0f64,
        0.1..3.0f64,
        -1.0..=1.0f64,
    )
        .prop_map(|(a, b, k, delta, gamma, sigma, h, eta, s)| FirmParams {
            a,
            b,
            kappa: k * a,
            delta,
            gamma,
            sigma,
            h,
            eta,
            s_loading: s,
        })
}

fn economy() -> impl Strategy<Value = EconomyParams> {
    (prop::collection::vec(firm(), 1..6), 1.0..30.0f64, 1e-3..2.0f64)
        .prop_map(|(firms, t, lambda)| EconomyParams::new(firms, t, lambda).unwrap())
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn reference_spec() -> RegulatorSpec {
    Scenario::preset(EU_NETZERO_2050, None).unwrap().require_regulator().unwrap()
}

/// Quadratic specs around the reference: weights spread over four decades,
/// targets anywhere below the zero-price drift and up to 5 %/y.
fn regulator_spec() -> impl Strategy<Value = RegulatorSpec> {
    (-2.0..2.0f64, -2.0..2.0f64, 0.0..0.5f64, 0.0..0.05f64).prop_map(|(mu_exp, pi_exp, theta, nu)| {
        let base = reference_spec();
        let y_mu = base.emission_penalty.quadratic_weight().unwrap() * 10f64.powf(mu_exp);
        let y_pi = base.inflation_penalty.quadratic_weight().unwrap() * 10f64.powf(pi_exp);
        RegulatorSpec {
            theta: theta * (base.mu_bar_b + base.h_bar),
            nu,
            ..base.with_quadratic_weights(y_mu, y_pi)
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn aggregates_ignore_firm_order(economy in economy(), rotation in 0usize..5) {
        let mut shuffled = economy.clone();
        let len = shuffled.firms.len();
        shuffled.firms.rotate_left(rotation % len);
        shuffled.firms.reverse();
        let (a, b) = (derive_aggregates(&economy).unwrap(), derive_aggregates(&shuffled).unwrap());
        for (x, y) in [(a.mu_bar_b, b.mu_bar_b), (a.h_bar, b.h_bar), (a.phi_bar, b.phi_bar), (a.eta_bar, b.eta_bar), (a.psi_bar, b.psi_bar)] {
            prop_assert!(close(x, y, 1e-12), "{x} vs {y}");
        }
    }

    #[test]
    fn noise_correlation_is_positive_semidefinite(economy in economy()) {
        let agg = derive_aggregates(&economy).unwrap();
        let n = agg.n_firms();
        let rho = DMatrix::from_fn(n, n, |i, j| agg.rho[i][j]);
        let smallest = rho.symmetric_eigenvalues().min();
        prop_assert!(smallest >= -1e-12, "smallest eigenvalue {smallest}");
    }

    #[test]
    fn price_response_is_the_sum_of_both_channels(economy in economy()) {
        let agg = derive_aggregates(&economy).unwrap();
        let n = economy.firms.len() as f64;
        let direct: f64 = economy
            .firms
            .iter()
            .map(|f| f.eta + f.gamma * f.gamma / (f.delta + 2.0 * f.b))
            .sum::<f64>() / n;
        prop_assert!(close(agg.phi_bar, direct, 1e-13));
    }

    #[test]
    fn calibration_is_homogeneous(tax in 1.0..500.0f64, cut in 0.01..0.5f64, base in 1e6..1e10f64, c in 0.1..10.0f64) {
        let phi = calibrate_phi(tax, cut, base).unwrap();
        prop_assert!(close(calibrate_phi(c * tax, cut, base).unwrap(), phi / c, 1e-14));
        prop_assert!(close(calibrate_phi(tax, cut, c * base).unwrap(), phi * c, 1e-14));
        let lambda = calibrate_lambda(base).unwrap();
        prop_assert!(close(calibrate_lambda(c * base).unwrap(), lambda / c, 1e-14));
    }

    #[test]
    fn controls_are_affine_in_the_price(f in firm(), p1 in -100.0..1000.0f64, p2 in -100.0..1000.0f64, w in 0.0..1.0f64) {
        let mix = w * p1 + (1.0 - w) * p2;
        let q = w * optimal_production(&f, p1) + (1.0 - w) * optimal_production(&f, p2);
        let alpha = w * optimal_abatement(&f, p1) + (1.0 - w) * optimal_abatement(&f, p2);
        prop_assert!((optimal_production(&f, mix) - q).abs() <= 1e-9 * (1.0 + q.abs()));
        prop_assert!((optimal_abatement(&f, mix) - alpha).abs() <= 1e-9 * (1.0 + alpha.abs()));
    }

    #[test]
    fn basket_is_a_weighted_sum(firms in prop::collection::vec(firm(), 2..5), raw in prop::collection::vec(0.1..1.0f64, 5)) {
        let raw = &raw[..firms.len()];
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let last = firms.len() - 1;
        weights[last] = 1.0 - weights[..last].iter().sum::<f64>();
        let basket = basket_from_firms(&firms, &weights).unwrap();
        let singles: Vec<_> = firms.iter().map(|f| basket_from_firms(std::slice::from_ref(f), &[1.0]).unwrap()).collect();
        let omega: f64 = singles.iter().zip(&weights).map(|(b, w)| w * b.omega_bar).sum();
        let pi_b: f64 = singles.iter().zip(&weights).map(|(b, w)| w * b.pi_b).sum();
        prop_assert!(close(basket.omega_bar, omega, 1e-12));
        prop_assert!(close(basket.pi_b, pi_b, 1e-12));
    }

    #[test]
    fn cpi_adjustment_is_linear(f in firm(), p1 in 0.0..1000.0f64, p2 in 0.0..1000.0f64, c in 0.0..5.0f64) {
        let basket = basket_from_firms(&[f], &[1.0]).unwrap();
        let sum = policy_cpi_adjustment(&basket, p1) + policy_cpi_adjustment(&basket, p2);
        prop_assert!(close(policy_cpi_adjustment(&basket, p1 + p2), sum, 1e-12));
        prop_assert!(close(policy_cpi_adjustment(&basket, c * p1), c * policy_cpi_adjustment(&basket, p1), 1e-12));
    }

    #[test]
    fn initial_price_is_affine_in_the_allocation(economy in economy(), frac in 0.0..1.0f64, shift in 0.01..0.5f64) {
        let agg = derive_aggregates(&economy).unwrap();
        let (t, lambda) = (economy.horizon, economy.lambda);
        let m = frac * agg.zero_price_emission_rate() * t;
        let h = shift * agg.zero_price_emission_rate() * t;
        let slope = (initial_price(&agg, m, t, lambda) - initial_price(&agg, m + h, t, lambda)) / h;
        let expected = price_sensitivity(lambda, agg.phi_bar, t).unwrap();
        prop_assert!(close(slope, expected, 1e-8), "{slope} vs {expected}");
    }

    #[test]
    fn price_volatility_grows_to_twice_lambda(economy in economy(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let agg = derive_aggregates(&economy).unwrap();
        let (t, lambda) = (economy.horizon, economy.lambda);
        let f = |s: f64| price_volatility_f(lambda, agg.phi_bar, t, s).unwrap();
        let (lo, hi) = (u.min(v) * t, u.max(v) * t);
        if hi > lo {
            prop_assert!(f(hi) > f(lo));
        }
        prop_assert_eq!(f(t), 2.0 * lambda);
    }

    #[test]
    fn three_minimizers_agree(spec in regulator_spec()) {
        let closed = closed_form_price(&spec).unwrap();
        let bisected = bisect_price(&spec).unwrap();
        prop_assert!(close(bisected, closed, 1e-6), "bisection {bisected} vs {closed}");
        let hi = 2.0 * closed.max(spec.net_zero_price().unwrap());
        let grid = grid_minimize_s(&spec, 0.0, hi, 2001).unwrap();
        prop_assert!(close(grid.argmin, closed, 1e-6), "grid {} vs {closed}", grid.argmin);
    }

    #[test]
    fn comparative_statics(spec in regulator_spec(), c in 1.5..20.0f64) {
        let y_mu = spec.emission_penalty.quadratic_weight().unwrap();
        let y_pi = spec.inflation_penalty.quadratic_weight().unwrap();
        let p = closed_form_price(&spec).unwrap();
        // a heavier emission weight raises the price while emissions at P* still exceed the target
        if spec.emission_deviation(p) > 0.0 {
            let p_mu = closed_form_price(&spec.with_quadratic_weights(c * y_mu, y_pi)).unwrap();
            prop_assert!(p_mu >= p * (1.0 - 1e-12), "y_mu up: {p} -> {p_mu}");
        }
        if spec.nu < spec.pass_through * p {
            let p_pi = closed_form_price(&spec.with_quadratic_weights(y_mu, c * y_pi)).unwrap();
            prop_assert!(p_pi <= p * (1.0 + 1e-12), "y_pi up: {p} -> {p_pi}");
        }
    }
}
