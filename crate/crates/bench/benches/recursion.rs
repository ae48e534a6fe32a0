use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recursub::estimators::{build_control_variates, wde_loglik};
use recursub::model::{simulate, DerivLevel, ErrorLaw, Family, LikelihoodModel, ModelSpec, PreSample, TermModel};
use recursub::scheme::SamplingScheme;
use recursub::tuning::expected_umax;

const TRUTH: [f64; 4] = [0.0, 0.1, 0.1, 0.8];

fn model(t_len: usize) -> LikelihoodModel {
    let spec = ModelSpec::new(Family::Garch, 1, 1, ErrorLaw::Normal).unwrap();
    let data = simulate(&spec, &TRUTH, t_len, &PreSample::constant(1, 1, 0.0, 1.0).unwrap(), 1).unwrap();
    LikelihoodModel::new(spec, data, None).unwrap()
}

fn recursion(c: &mut Criterion) {
    let mut g = c.benchmark_group("recursion");
    let m = model(10_000);
    let phi = m.map.to_phi(&TRUTH).unwrap();
    for (name, level) in [("value", DerivLevel::None), ("gradient", DerivLevel::Gradient), ("hessian", DerivLevel::Hessian)] {
        g.bench_function(BenchmarkId::new(name, 10_000), |b| b.iter(|| m.terms(&phi, 10_000, level).unwrap()));
    }
    g.finish();
}

fn estimator(c: &mut Criterion) {
    let m = model(10_000);
    let star = m.map.to_phi(&TRUTH).unwrap();
    let cache = build_control_variates(&m, &star).unwrap();
    let scheme = SamplingScheme::tpd_for_floor(0.01, 1000, 100.0, 10_000).unwrap();
    let phi: Vec<f64> = star.iter().map(|v| v + 0.01).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = c.benchmark_group("wde_loglik");
    for size in [2usize, 20] {
        g.bench_function(BenchmarkId::from_parameter(size), |b| {
            b.iter(|| {
                let sub = scheme.draw_indices(size, &mut rng);
                wde_loglik(&m, &cache, &scheme, &phi, &sub).unwrap()
            })
        });
    }
    g.finish();
}

fn cost(c: &mut Criterion) {
    let scheme = SamplingScheme::tpd_for_floor(0.05, 1000, 100.0, 10_000).unwrap();
    c.bench_function("expected_umax/10000", |b| b.iter(|| expected_umax(scheme.probs(), 50)));
}

criterion_group!(benches, recursion, estimator, cost);
criterion_main!(benches);
