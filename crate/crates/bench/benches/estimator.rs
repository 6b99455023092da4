use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use proxbridge::bridge_solver::{select_min_norm, QuadraticCriterion, SelectionWeights};
use proxbridge::oracle::{bridge_solution_set, presets, BridgeKind};
use proxbridge::simulation::LinearGaussianSpec;
use proxbridge::{estimate, DgpSpec, EstimatorConfig, Projector};

fn bench_estimate(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate");
    group.sample_size(20);
    let discrete = DgpSpec::Discrete(presets::nonunique());
    let gaussian = DgpSpec::LinearGaussian(LinearGaussianSpec::default());
    let config = EstimatorConfig::default();
    for n in [500, 2000, 8000] {
        for (name, dgp) in [("discrete", &discrete), ("linear_gaussian", &gaussian)] {
            let data = dgp.sample(n, 7).unwrap();
            group.bench_with_input(BenchmarkId::new(name, n), &data, |b, data| {
                b.iter(|| estimate(black_box(data), &config).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_select(c: &mut Criterion) {
    let mut group = c.benchmark_group("select_min_norm");
    for p in [4, 16, 48] {
        let a = DMatrix::from_fn(p, p, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let gram = &a * a.transpose() + DMatrix::identity(p, p) * 0.05;
        let star = DVector::from_fn(p, |i, _| (i as f64).sin());
        let q = QuadraticCriterion::new(
            gram.clone(),
            &gram * &star,
            (star.transpose() * &gram * &star)[(0, 0)],
        )
        .unwrap();
        let m = SelectionWeights::from_matrix(DMatrix::identity(p, p));
        let c_n = 0.1 * q.value(&DVector::zeros(p));
        group.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, _| {
            b.iter(|| select_min_norm(black_box(&q), c_n, &m).unwrap())
        });
    }
    group.finish();
}

fn bench_projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("projector");
    for (n, k) in [(2000, 10), (8000, 30)] {
        let phi = DMatrix::from_fn(n, k, |i, j| ((i * (j + 1)) as f64 * 0.37).sin());
        group.bench_with_input(BenchmarkId::new(format!("k{k}"), n), &phi, |b, phi| {
            b.iter(|| Projector::new(black_box(phi)).unwrap())
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let joint = presets::nonunique();
    c.bench_function("oracle/solution_set", |b| {
        b.iter(|| bridge_solution_set(black_box(&joint), 1, BridgeKind::Outcome).unwrap())
    });
}

criterion_group!(
    benches,
    bench_estimate,
    bench_select,
    bench_projection,
    bench_oracle
);
criterion_main!(benches);
