//! Benchmarks for the closed loop's hot paths: the plant right-hand side
//! via one integrator step, the flatness feedforward synthesis, and a full
//! one-second experiment.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use pamsim::closed_loop::{self, ControllerMode};
use pamsim::flatness;
use pamsim_bench::{bench_config, bench_jet, bench_state};

fn bench_plant_step(c: &mut Criterion) {
    let cfg = bench_config();
    let x = bench_state(&cfg);
    let q = [1.0e-5, -5.0e-6, 2.0e-6];
    c.bench_function("plant_step_rk4", |b| {
        b.iter(|| {
            closed_loop::plant_step(
                black_box(&cfg.muscle),
                black_box(&cfg.geometry),
                black_box(&x),
                black_box(&q),
                (0.1, -0.05),
                1e-4,
            )
            .unwrap()
        })
    });
}

fn bench_drift_field(c: &mut Criterion) {
    let cfg = bench_config();
    let x = bench_state(&cfg);
    c.bench_function("drift_field", |b| {
        b.iter(|| {
            flatness::drift_field(black_box(&cfg.muscle), black_box(&cfg.geometry), black_box(&x))
                .unwrap()
        })
    });
}

fn bench_feedforward(c: &mut Criterion) {
    let cfg = bench_config();
    let jet = bench_jet(&cfg);
    c.bench_function("feedforward_control", |b| {
        b.iter(|| {
            flatness::feedforward_control(
                black_box(&cfg.muscle),
                black_box(&cfg.geometry),
                black_box(&jet),
                [0.0; 3],
            )
            .unwrap()
        })
    });
}

fn bench_one_second_run(c: &mut Criterion) {
    let mut cfg = bench_config();
    cfg.mode = ControllerMode::FlatnessPi;
    cfg.reference.duration = 1.0;
    c.bench_function("run_experiment_1s_flatness_pi", |b| {
        b.iter(|| closed_loop::run_experiment(black_box(&cfg)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_plant_step,
    bench_drift_field,
    bench_feedforward,
    bench_one_second_run
);
criterion_main!(benches);
