//! Forward-pass timing for both mechanisms over a short length sweep. The
//! CLI's bench subcommand is the measured deliverable; this target exists
//! for interactive profiling with criterion's statistics.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wersa_core::attention::{init_wersa_params, mha_forward, wersa_forward, WersaConfig};
use wersa_core::RngState;
use wersa_core::tensor::sample_gaussian;

fn forward_scaling(c: &mut Criterion) {
    let cfg = WersaConfig {
        levels: 2,
        features: 64,
        seed: 7,
        ..WersaConfig::new(16, 1)
    };
    let params = init_wersa_params(&cfg).unwrap();
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for n in [256usize, 1024, 4096] {
        let mut rng = RngState::new(7 ^ n as u64);
        let x = sample_gaussian(&mut rng, &[1, n, cfg.d_model]);
        group.bench_with_input(BenchmarkId::new("wersa", n), &x, |b, x| {
            b.iter(|| wersa_forward(&cfg, &params, x, x, x, None, false).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("standard", n), &x, |b, x| {
            b.iter(|| mha_forward(&cfg, &params, x, x, x).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward_scaling);
criterion_main!(benches);
