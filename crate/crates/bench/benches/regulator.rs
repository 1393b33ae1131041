use std::hint::black_box;

use cap_trade::oracle::grid_minimize_s;
use cap_trade::regulator::{bisect_price, sweep_ratio_surface};
use cap_trade::scenario::{Scenario, EU_NETZERO_2050};
use cap_trade::minimize_social_cost;
use criterion::{criterion_group, criterion_main, Criterion};

fn minimizers(c: &mut Criterion) {
    let spec = Scenario::preset(EU_NETZERO_2050, None).unwrap().require_regulator().unwrap();
    c.bench_function("minimize_social_cost/closed-form", |b| {
        b.iter(|| minimize_social_cost(black_box(&spec)).unwrap())
    });
    c.bench_function("minimize_social_cost/bisection", |b| b.iter(|| bisect_price(black_box(&spec)).unwrap()));
    c.bench_function("grid_minimize_s/2001", |b| {
        b.iter(|| grid_minimize_s(black_box(&spec), 0.0, 2000.0, 2001).unwrap())
    });
}

fn sweep(c: &mut Criterion) {
    let spec = Scenario::preset(EU_NETZERO_2050, None).unwrap().require_regulator().unwrap();
    let y_mu = spec.emission_penalty.quadratic_weight().unwrap();
    let y_pi = spec.inflation_penalty.quadratic_weight().unwrap();
    let axis = |w: f64| -> Vec<f64> { (0..50).map(|j| w * 10f64.powf(-2.0 + 4.0 * j as f64 / 49.0)).collect() };
    let (mu, pi) = (axis(y_mu), axis(y_pi));
    c.bench_function("sweep_ratio_surface/50x50", |b| b.iter(|| sweep_ratio_surface(&spec, &mu, &pi).unwrap()));
}

criterion_group!(benches, minimizers, sweep);
criterion_main!(benches);
