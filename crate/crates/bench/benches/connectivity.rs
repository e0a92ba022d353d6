use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prunelens::connectivity::{effective_report, oracle_effective, synflow_log_scores};
use prunelens::init_weights;
use prunelens_bench::random_masked;
use std::hint::black_box;

fn reachability(c: &mut Criterion) {
    let mut group = c.benchmark_group("effective_report");
    for (name, s) in [("lenet300100", 0.99), ("lenet5", 0.9), ("vgg16", 0.99)] {
        let (arch, mask) = random_masked(name, s, 0);
        group.bench_with_input(BenchmarkId::new(name, s), &mask, |b, m| {
            b.iter(|| effective_report(&arch, black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let (arch, mask) = random_masked("lenet5", 0.9, 0);
    c.bench_function("oracle/lenet5", |b| {
        b.iter(|| oracle_effective(&arch, black_box(&mask), 100_000).unwrap())
    });
}

fn synflow(c: &mut Criterion) {
    let (arch, mask) = random_masked("lenet300100", 0.9, 0);
    let w = init_weights(&arch, 0);
    c.bench_function("synflow/lenet300100", |b| {
        b.iter(|| synflow_log_scores(&arch, &w, black_box(&mask)).unwrap())
    });
}

criterion_group!(benches, reachability, oracle, synflow);
criterion_main!(benches);
