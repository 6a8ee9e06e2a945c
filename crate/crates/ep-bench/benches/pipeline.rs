//! End-to-end pipeline benchmarks: curve fitting, reconstruction, inference.

use criterion::{criterion_group, criterion_main, Criterion};
use ep_bench::{arc_polyline, scenarios};
use ep_core::eval::{evaluate_set, MetricSpec};
use ep_core::fit::{fit_polyline_tls, split_until_fit};
use ep_core::model::net::{EPConfig, EpModel, Variant};
use ep_core::model::reconstruct::{build_observation_matrix, reconstruct_trajectory, StateVector14};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_fitting(c: &mut Criterion) {
    let polyline = arc_polyline();
    c.bench_function("tls_fit_cubic_arc", |b| {
        b.iter(|| fit_polyline_tls(black_box(&polyline), 3).unwrap())
    });
    c.bench_function("split_until_fit_arc", |b| {
        b.iter(|| split_until_fit(black_box(&polyline), 3, 0.1).unwrap())
    });
}

fn bench_reconstruction(c: &mut Criterion) {
    let obs = build_observation_matrix(0.0, 3.0, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let states: Vec<StateVector14> = (0..64)
        .map(|_| StateVector14(std::array::from_fn(|_| rng.gen_range(-10.0..10.0))))
        .collect();
    c.bench_function("reconstruct_64_states", |b| {
        b.iter(|| {
            for s in &states {
                black_box(reconstruct_trajectory(black_box(s), &obs));
            }
        })
    });
}

fn bench_inference(c: &mut Criterion) {
    let set = scenarios(8);
    let model = EpModel::new(EPConfig::for_variant(Variant::EpF)).unwrap();
    c.bench_function("predict_focal_d64", |b| {
        b.iter(|| model.predict_focal(black_box(&set[0])).unwrap())
    });
    let spec = MetricSpec::default();
    c.bench_function("evaluate_8_scenarios", |b| {
        b.iter(|| evaluate_set(&model, black_box(&set), &spec).unwrap())
    });
}

criterion_group!(pipeline, bench_fitting, bench_reconstruction, bench_inference);
criterion_main!(pipeline);
