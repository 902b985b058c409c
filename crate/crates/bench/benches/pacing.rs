use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pacekit_core::auction::{run_episode, CampaignConfig, EpisodeSeed, MarketParams};
use pacekit_core::isotonic::{pava, BidValuePair};
use pacekit_core::strategy::{MpcConfig, MpcMaxDelivery};
use pacekit_core::{ConstantBid, PidConfig, PidPacer};

fn noisy_pairs(n: usize) -> Vec<BidValuePair> {
    // deterministic zig-zag so PAVA has work to do
    (0..n)
        .map(|i| {
            let b = 0.01 * (i + 1) as f64;
            let wiggle = if i % 3 == 0 { 0.4 } else { -0.2 };
            BidValuePair::new(b, b * 10.0 + wiggle)
        })
        .collect()
}

fn bench_pava(c: &mut Criterion) {
    let mut group = c.benchmark_group("pava");
    for n in [20usize, 200, 2000] {
        let pairs = noisy_pairs(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pairs, |b, p| b.iter(|| pava(black_box(p))));
    }
    group.finish();
}

fn bench_episode(c: &mut Criterion) {
    let market = MarketParams::default();
    let campaign = CampaignConfig::default();
    let seed = EpisodeSeed::evaluation(7, 0);
    let mut group = c.benchmark_group("episode");
    group.sample_size(20);
    group.bench_function("constant", |b| {
        b.iter(|| run_episode(&mut ConstantBid::new(0.3), &campaign, &market, seed).unwrap())
    });
    group.bench_function("pid", |b| {
        b.iter(|| run_episode(&mut PidPacer::new(PidConfig::default(), 0.1), &campaign, &market, seed).unwrap())
    });
    group.bench_function("mpc", |b| {
        b.iter(|| {
            let mut s = MpcMaxDelivery::new(MpcConfig::default());
            run_episode(&mut s, &campaign, &market, seed).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_pava, bench_episode);
criterion_main!(benches);
