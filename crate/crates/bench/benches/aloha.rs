use std::hint::black_box;

use aloha_core::chain::{simulate_trajectory, step, QueueState, SlotDraw};
use aloha_core::oracle::{build_truncated_chain, exact_return_time};
use aloha_core::recurrence::sample_return_times;
use aloha_core::region::find_c1_witness;
use aloha_core::{NetworkConfig, WitnessOptions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn bench_step(c: &mut Criterion) {
    let state = QueueState::new(vec![3, 0, 7, 1]);
    let draw = SlotDraw { arrivals: vec![1, 0, 0, 1], windows: vec![0, 1, 1, 0] };
    c.bench_function("step/4 users", |b| b.iter(|| step(black_box(&state), black_box(&draw)).unwrap()));
}

fn bench_simulate(c: &mut Criterion) {
    let cfg = NetworkConfig::bernoulli(&[0.1, 0.1], &[0.5, 0.5]).unwrap();
    let mut g = c.benchmark_group("simulate");
    g.throughput(Throughput::Elements(100_000));
    g.bench_function("trajectory 1e5 slots", |b| {
        b.iter(|| simulate_trajectory(&cfg, &QueueState::origin(2), 100_000, black_box(1), None).unwrap())
    });
    g.bench_function("1e4 return times", |b| {
        b.iter(|| sample_return_times(&cfg, 1_000_000, 10_000, black_box(2)).unwrap())
    });
    g.finish();
}

fn bench_witness(c: &mut Criterion) {
    let mut g = c.benchmark_group("witness");
    for lambda in [vec![0.1, 0.1], vec![0.3, 0.3], vec![0.03, 0.04, 0.05], vec![0.02; 4]] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{lambda:?}")), &lambda, |b, l| {
            b.iter(|| find_c1_witness(l, &WitnessOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let cfg = NetworkConfig::bernoulli(&[0.1, 0.1], &[0.5, 0.5]).unwrap();
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    for cap in [20, 60] {
        g.bench_with_input(BenchmarkId::new("build", cap), &cap, |b, &n| {
            b.iter(|| build_truncated_chain(&cfg, n).unwrap())
        });
        let chain = build_truncated_chain(&cfg, cap).unwrap();
        g.bench_with_input(BenchmarkId::new("solve", cap), &chain, |b, ch| {
            b.iter(|| exact_return_time(ch).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_step, bench_simulate, bench_witness, bench_oracle);
criterion_main!(benches);
