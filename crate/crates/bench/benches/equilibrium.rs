use std::hint::black_box;

use cap_trade::scenario::{Scenario, EU_NETZERO_2050};
use cap_trade::{simulate, solve_equilibrium, SimulationSettings};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn closed_form(c: &mut Criterion) {
    let s = Scenario::preset(EU_NETZERO_2050, Some(4)).unwrap();
    let alloc = s.allocation_program().unwrap();
    c.bench_function("solve_equilibrium/eu-n4", |b| {
        b.iter(|| solve_equilibrium(black_box(&s.economy), black_box(&alloc)).unwrap())
    });
}

fn ensemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for name in ["two-firm-symmetric", "heterogeneous-three"] {
        let s = Scenario::preset(name, None).unwrap();
        let alloc = s.allocation_program().unwrap();
        let settings = SimulationSettings::new(500, 1_000, 1);
        group.bench_with_input(BenchmarkId::from_parameter(name), &settings, |b, settings| {
            b.iter(|| simulate(&s.economy, &alloc, settings).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, closed_form, ensemble);
criterion_main!(benches);
