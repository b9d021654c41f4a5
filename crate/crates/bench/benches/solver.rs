use std::hint::black_box;

use admission_bench::baseline;
use admission_core::chain::{poisson_step_probs, propagate, ProgressMatrix};
use admission_core::{build_model, solve};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn assemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble");
    for size in [25, 50, 100] {
        let scenario = baseline(size, size);
        group.bench_with_input(BenchmarkId::from_parameter(size), &scenario, |b, sc| {
            b.iter(|| build_model(black_box(sc)).unwrap())
        });
    }
    group.finish();
}

fn backward_pass(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(20);
    for size in [25, 50, 100] {
        let model = build_model(&baseline(size, size)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), &model, |b, m| {
            b.iter(|| solve(black_box(m)))
        });
    }
    group.finish();
}

fn risk_propagation(c: &mut Criterion) {
    let sc = baseline(100, 100);
    let g = sc.grid;
    let p = poisson_step_probs(133.33, g.delta_s(), g.delta_t(), g.steps()).unwrap();
    let matrix = ProgressMatrix::from_steps(&p);
    c.bench_function("propagate/100", |b| {
        b.iter(|| propagate(black_box(&matrix), g.stages()))
    });
}

criterion_group!(benches, assemble, backward_pass, risk_propagation);
criterion_main!(benches);
