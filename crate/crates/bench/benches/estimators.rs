use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use covadj::aa::run_aa;
use covadj::dataset::{generate, SyntheticConfig};
use covadj::stress::augment;
use covadj::{estimate, ExperimentData, ModelSpec};
use std::hint::black_box;

fn data(n: usize, k: usize) -> ExperimentData {
    generate(&SyntheticConfig {
        n_units: n,
        k_covariates: k,
        outcome_cor: 0.7,
        extra_cor: 0.2,
        true_ate: 0.1,
        baseline: 2.0,
        seed: 1,
        ..SyntheticConfig::default()
    })
    .expect("valid config")
}

fn models(c: &mut Criterion) {
    let d = data(20_000, 5);
    let mut g = c.benchmark_group("estimate_n20k_k5");
    g.throughput(Throughput::Elements(d.len() as u64));
    for name in ["dim", "ols", "ridge", "lasso", "pcr", "tweedie", "two_step:ridge"] {
        let spec: ModelSpec = name.parse().expect("known model");
        g.bench_function(name, |b| b.iter(|| estimate(black_box(&d), &spec, 0.05, 0)));
    }
    g.finish();
}

fn ols_scaling(c: &mut Criterion) {
    let mut g = c.benchmark_group("ols_by_n");
    g.sample_size(10);
    for n in [10_000usize, 100_000, 1_000_000] {
        let d = data(n, 10);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &d, |b, d| {
            b.iter(|| estimate(d, &ModelSpec::ols(), 0.05, 0))
        });
    }
    g.finish();
}

fn spurious_folds(c: &mut Criterion) {
    let d = data(10_000, 3);
    let mut g = c.benchmark_group("ols_with_spurious_folds");
    g.sample_size(20);
    for l in [1usize, 3, 5] {
        let aug = augment(&d, l, 7).expect("augment");
        g.bench_with_input(BenchmarkId::from_parameter(l), &aug, |b, a| {
            b.iter(|| estimate(a, &ModelSpec::ols(), 0.05, 0))
        });
    }
    g.finish();
}

fn aa_splits(c: &mut Criterion) {
    let d = data(4_000, 2);
    let specs = [ModelSpec::dim(), ModelSpec::ols()];
    let mut g = c.benchmark_group("aa");
    g.sample_size(10);
    g.bench_function("s100_n2k", |b| b.iter(|| run_aa(&d, 0, &specs, 100, 0.05, 3)));
    g.finish();
}

criterion_group!(benches, models, ols_scaling, spurious_folds, aa_splits);
criterion_main!(benches);
