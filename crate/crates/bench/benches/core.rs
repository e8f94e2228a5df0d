use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dream_core::mathkit::{cmaes_minimize, hosvd, pinv, Matrix, Tensor3};
use dream_core::nn::{Activation, Network};
use dream_core::qd::{random_baseline, QdConfig, QdSearch};
use dream_core::rng;
use dream_core::{Environment, EnvironmentSpec};

fn simulation(c: &mut Criterion) {
    let env = EnvironmentSpec::throw();
    let bounds = env.bounds();
    let mut r = rng::rng(1);
    let thetas: Vec<_> = (0..64)
        .map(|_| env.params(bounds.sample(&mut r)).unwrap())
        .collect();
    c.bench_function("throw_execute_64", |b| {
        b.iter(|| {
            for t in &thetas {
                black_box(env.execute_nominal(t).unwrap());
            }
        })
    });
}

fn repertoire(c: &mut Criterion) {
    let env = EnvironmentSpec::throw();
    c.bench_function("random_baseline_2000", |b| {
        b.iter(|| black_box(random_baseline(&env, 2000, 3, env.novelty_radius()).unwrap().len()))
    });
    let cfg = QdConfig {
        initial: 500,
        ..QdConfig::default()
    };
    let mut search = QdSearch::new(&env, &cfg).unwrap();
    for _ in 0..50 {
        search.step(&env).unwrap();
    }
    c.bench_function("qd_generation", |b| {
        b.iter_batched(
            || search.clone(),
            |mut s| s.step(&env).unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
}

fn linear_algebra(c: &mut Criterion) {
    let mut r = rng::rng(2);
    let a = Matrix::random_normal(16, 15, &mut r);
    c.bench_function("pinv_16x15", |b| b.iter(|| black_box(pinv(&a, 1e-12))));
    let slices: Vec<Matrix> = (0..3).map(|_| Matrix::random_normal(16, 16, &mut r)).collect();
    let t = Tensor3::stack(&slices).unwrap();
    c.bench_function("hosvd_16x16x3", |b| b.iter(|| black_box(hosvd(&t, t.full_ranks()).unwrap())));
    c.bench_function("cmaes_sphere_10d_2000", |b| {
        b.iter(|| {
            let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
            black_box(cmaes_minimize(f, &[1.0; 10], 0.5, 2000, 4).unwrap().f_best)
        })
    });
}

fn networks(c: &mut Criterion) {
    use Activation::*;
    let net = Network::new(&[256, 64, 13], &[Tanh, Linear], 5).unwrap();
    let x: Vec<f64> = (0..256).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("mlp_forward_256_64_13", |b| b.iter(|| black_box(net.forward(&x).unwrap())));
}

criterion_group!(benches, simulation, repertoire, linear_algebra, networks);
criterion_main!(benches);
