use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use labelleak_bench::{fixture, system};
use labelleak_core::attack::{mc_confusion, recover_labels, solve_simplex_ls, AttackParams};
use labelleak_core::nn::backward_pass;

fn backward(c: &mut Criterion) {
    let fx = fixture(1);
    let idx: Vec<usize> = (0..32).collect();
    let (xs, ys) = fx.data.gather(&idx);
    c.bench_function("backward_pass/batch32", |b| {
        b.iter(|| backward_pass(&fx.model, &xs, &ys).unwrap())
    });
}

fn confusion(c: &mut Criterion) {
    let fx = fixture(1);
    let mut group = c.benchmark_group("mc_confusion");
    for samples in [1_000, 10_000] {
        group.bench_with_input(BenchmarkId::from_parameter(samples), &samples, |b, &m| {
            b.iter(|| mc_confusion(&fx.moments, m, 3).unwrap())
        });
    }
    group.finish();
}

fn solver(c: &mut Criterion) {
    let fx = fixture(1);
    let (a, u) = system(&fx);
    c.bench_function("solve_simplex_ls/n10", |b| {
        b.iter(|| solve_simplex_ls(&a, &u, 1e-10, 10_000).unwrap())
    });
}

fn attack(c: &mut Criterion) {
    let mut group = c.benchmark_group("recover_labels");
    group.sample_size(10);
    for epochs in [1, 10] {
        let fx = fixture(epochs);
        group.bench_with_input(BenchmarkId::new("epochs", epochs), &fx, |b, fx| {
            b.iter(|| {
                recover_labels(&fx.model, &fx.update, &fx.aux, &fx.cfg, &fx.history, &AttackParams::default()).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, backward, confusion, solver, attack);
criterion_main!(benches);
