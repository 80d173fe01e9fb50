use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use nalgebra::DVector;
use prfl_core::gp::{chol_append, matern_kernel, GpState, Hyperparams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

fn append_vs_refit(c: &mut Criterion) {
    let eta = Hyperparams::default();
    let mut group = c.benchmark_group("cholesky");
    group.sample_size(10);
    for n in [100, 250, 500, 1000] {
        let x = points(n + 1, 6);
        let y = vec![0.0; n + 1];
        let state = GpState::fit(x[..n].to_vec(), y[..n].to_vec(), eta).unwrap();
        let kv = DVector::from_iterator(n, x[..n].iter().map(|p| matern_kernel(&eta, p, &x[n], false)));
        let k_new = eta.alpha + eta.eps * eta.eps;
        group.bench_with_input(BenchmarkId::new("append", n), &n, |b, _| {
            b.iter(|| chol_append(state.l(), state.l_inv(), &kv, k_new).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("refit", n), &n, |b, _| {
            b.iter_batched(|| x.clone(), |x| GpState::fit(x, y.clone(), eta).unwrap(), BatchSize::LargeInput)
        });
    }
    group.finish();
}

fn posterior(c: &mut Criterion) {
    let x = points(200, 6);
    let y: Vec<f64> = x.iter().map(|p| p.iter().sum::<f64>().sin()).collect();
    let state = GpState::fit_standardized(x, y, Hyperparams::default()).unwrap();
    let q = vec![0.5; 6];
    c.bench_function("posterior n=200", |b| b.iter(|| state.posterior(&q)));
}

criterion_group!(benches, append_vs_refit, posterior);
criterion_main!(benches);
