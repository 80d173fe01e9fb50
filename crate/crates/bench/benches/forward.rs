use criterion::{criterion_group, criterion_main, Criterion};
use prfl_core::forward::{respond, solve_static_response, ForwardOptions, ResponseMode};
use prfl_core::scenario::{generate_prices, sample_fleet, FleetSpec, PriceSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let single = FleetSpec {
        n_storage: 1,
        n_generators: 0,
        n_interruptible: 0,
        ..FleetSpec::default()
    };
    let one = sample_fleet(&single, &mut rng).unwrap();
    let full = sample_fleet(&FleetSpec::default(), &mut rng).unwrap();
    let day = generate_prices(&PriceSpec::default(), 24, 1, &mut rng).unwrap().remove(0);
    let opts = ForwardOptions::default();

    c.bench_function("static, 1 storage", |b| b.iter(|| solve_static_response(&one, &day, &opts).unwrap()));
    c.bench_function("static, default fleet", |b| {
        b.iter(|| solve_static_response(&full, &day, &opts).unwrap())
    });
    let dyn_opts = ForwardOptions::for_mode(ResponseMode::Dynamic);
    c.bench_function("dynamic day, 1 storage", |b| {
        b.iter(|| respond(&one, &day, ResponseMode::Dynamic, &dyn_opts).unwrap())
    });
}

criterion_group!(benches, forward);
criterion_main!(benches);
