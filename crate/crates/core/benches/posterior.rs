//! Sequential vs data-parallel timings of the main pipelines.
//!
//! With the `parallel` feature each workload runs once inside a one-thread
//! rayon pool and once on the global pool. Without it only the sequential
//! variant exists.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fuzzywave::conjugate::{fit_conjugate, ConjugateConfig};
use fuzzywave::harness::{simulate, BuiltinGuess, PriorGuess, SimConfig};
use fuzzywave::membership::HyperPrior;
use fuzzywave::model::{ModelConfig, WaveletModel};
use fuzzywave::model_check::bayes_factor;
use fuzzywave::quadrature::QuadratureConfig;
use fuzzywave::robustness::{robustness_bands, MCConfig};

fn seasonal_model() -> WaveletModel {
    let data = simulate(&SimConfig::seasonal(1)).unwrap();
    WaveletModel::build(&data, &PriorGuess::Builtin(BuiltinGuess::Seasonal), &ModelConfig::default()).unwrap()
}

fn benchmark_model() -> WaveletModel {
    let data = simulate(&SimConfig::benchmark(1)).unwrap();
    WaveletModel::build(&data, &PriorGuess::Builtin(BuiltinGuess::Cos), &ModelConfig::default()).unwrap()
}

#[cfg(feature = "parallel")]
fn variants() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("sequential", Some(one)), ("parallel", None)]
}

#[cfg(not(feature = "parallel"))]
fn variants() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn within<T: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn within<T: Send>(_: &Option<()>, f: impl FnOnce() -> T + Send) -> T {
    f()
}

fn model_build(c: &mut Criterion) {
    let data = simulate(&SimConfig::seasonal(1)).unwrap();
    let mut g = c.benchmark_group("model_build_n185");
    g.sample_size(10);
    for (name, pool) in variants() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                within(&pool, || {
                    WaveletModel::build(
                        black_box(&data),
                        &PriorGuess::Builtin(BuiltinGuess::Seasonal),
                        &ModelConfig::default(),
                    )
                    .unwrap()
                })
            })
        });
    }
    g.finish();
}

fn conjugate(c: &mut Criterion) {
    let model = seasonal_model();
    let hp = HyperPrior::default();
    let spec = model.gaussian_spec();
    let mut g = c.benchmark_group("conjugate_fit_n185");
    g.sample_size(10);
    for (name, pool) in variants() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| within(&pool, || fit_conjugate(&model, &spec, &hp, ConjugateConfig::default(), &[]).unwrap()))
        });
    }
    g.finish();
}

fn bayes(c: &mut Criterion) {
    let model = seasonal_model();
    let hp = HyperPrior::default();
    let spec = model.gaussian_spec();
    let mut g = c.benchmark_group("bayes_factor_n185");
    g.sample_size(10);
    for (name, pool) in variants() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| within(&pool, || bayes_factor(&model, &spec, &hp, QuadratureConfig::default()).unwrap()))
        });
    }
    g.finish();
}

fn robustness(c: &mut Criterion) {
    let model = benchmark_model();
    let hp = HyperPrior::default();
    let spec = model.gaussian_spec();
    let mc = MCConfig {
        samples: 1000,
        seed: 3,
        tau2: None,
    };
    let mut g = c.benchmark_group("robustness_bands_1000");
    g.sample_size(10);
    for (name, pool) in variants() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                within(&pool, || {
                    robustness_bands(&model, &spec, &hp, QuadratureConfig::default(), &mc, &[(1.0, 2.0), (0.5, 4.0)])
                        .unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, model_build, conjugate, bayes, robustness);
criterion_main!(benches);
