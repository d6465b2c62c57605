use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transport_core::{
    estimate_theta, fit_adaptive_lasso, fit_glm, sample_dgm, DgmSpec, EstimatorConfig, Family,
    LearnerKind, LearnerSpec,
};

fn bench_glm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 5000;
    let x = Array2::from_shape_fn((n, 10), |_| rng.gen::<f64>());
    let y: Vec<f64> = (0..n)
        .map(|i| f64::from(rng.gen::<f64>() < 0.2 + 0.5 * x[[i, 0]]))
        .collect();
    let spec = LearnerSpec::new(LearnerKind::GlmMain, Family::Binomial);
    c.bench_function("logit_glm_5000x10", |b| {
        b.iter(|| fit_glm(black_box(&spec), x.view(), &y, None).unwrap())
    });
}

fn bench_lasso(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 2000;
    let x = Array2::from_shape_fn((n, 10), |_| rng.gen::<f64>() - 0.5);
    let y: Vec<f64> = (0..n)
        .map(|i| 1.5 * x[[i, 0]] - 0.8 * x[[i, 5]] + 0.2 * (rng.gen::<f64>() - 0.5))
        .collect();
    let spec = LearnerSpec::adaptive_lasso(Family::Gaussian);
    c.bench_function("adaptive_lasso_2000x10", |b| {
        b.iter(|| fit_adaptive_lasso(black_box(&spec), x.view(), &y, 3).unwrap())
    });
}

fn bench_estimator(c: &mut Criterion) {
    let spec = DgmSpec::builtin(2).unwrap();
    let ds = sample_dgm(&spec, 2000, 9).unwrap();
    let subset = spec.subset();
    let cfg = EstimatorConfig::default().with_folds(2);
    c.bench_function("estimate_theta_dgm2_n2000_j2", |b| {
        b.iter(|| estimate_theta(black_box(&ds), &subset, &cfg).unwrap())
    });
}

fn bench_sampling(c: &mut Criterion) {
    let spec = DgmSpec::builtin(4).unwrap();
    c.bench_function("sample_dgm4_n100k", |b| {
        b.iter(|| sample_dgm(black_box(&spec), 100_000, 5).unwrap())
    });
}

criterion_group!(benches, bench_glm, bench_lasso, bench_estimator, bench_sampling);
criterion_main!(benches);
