//! Compares one worker against the full pool on the hot estimators.
//! Build with `--no-default-features` to time the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use weaklp::covering::{rotation_measure, Density, RotationBudget};
use weaklp::exec::{current_workers, with_workers};
use weaklp::fields::make_bump;
use weaklp::levelset::{pair_measure, Estimator, LevelSetQuery};
use weaklp::maximal::{gradient_grid, hl_maximal};
use weaklp::rng::RandomStream;

fn worker_counts() -> Vec<usize> {
    let n = current_workers().max(std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n > 1 {
        vec![1, n]
    } else {
        vec![1]
    }
}

fn pair_measure_mc(c: &mut Criterion) {
    let field = make_bump(&[0.0, 0.0], 1.0, 1.0).unwrap();
    let q = LevelSetQuery::critical(&field, 1.5).unwrap();
    let est = Estimator::MonteCarlo {
        samples: 50_000,
        stream: RandomStream::new(1, 0),
    };
    let mut group = c.benchmark_group("pair_measure_mc");
    for w in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| {
            b.iter(|| with_workers(w, || pair_measure(&q, 5.0, &est).unwrap()))
        });
    }
    group.finish();
}

fn rotation(c: &mut Criterion) {
    let field = make_bump(&[0.0, 0.0], 1.0, 1.0).unwrap();
    let density = Density::Abs(&field);
    let budget = RotationBudget {
        cells: 64,
        cell_order: 2,
        lines: 16,
        sphere_order: 8,
    };
    let mut group = c.benchmark_group("rotation_measure");
    group.sample_size(10);
    for w in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| {
            b.iter(|| with_workers(w, || rotation_measure(&density, &budget).unwrap()))
        });
    }
    group.finish();
}

fn maximal(c: &mut Criterion) {
    let field = make_bump(&[0.0, 0.0], 1.0, 1.0).unwrap();
    let g = gradient_grid(&field, 48).unwrap();
    let mut group = c.benchmark_group("hl_maximal_2d");
    group.sample_size(10);
    for w in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| b.iter(|| with_workers(w, || hl_maximal(&g))));
    }
    group.finish();
}

criterion_group!(benches, pair_measure_mc, rotation, maximal);
criterion_main!(benches);
