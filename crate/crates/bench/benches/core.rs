use std::time::Duration;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use memshare::cleaner::PassMode;
use memshare::engine::CacheEngine;
use memshare_bench::{config, filled, key, APP, VALUE_LEN};

fn append(c: &mut Criterion) {
    let mut engine = filled(config(256, 10), 0, 0);
    let value = vec![1u8; VALUE_LEN];
    let mut i = 0u64;
    let mut g = c.benchmark_group("log");
    g.throughput(Throughput::Elements(1));
    g.bench_function("append", |b| {
        b.iter(|| {
            i += 1;
            engine.set(APP, &key(i % 50_000), &value, i).unwrap();
        })
    });
    g.finish();
}

fn lookup(c: &mut Criterion) {
    let keys = 50_000;
    let mut engine = filled(config(256, 10), keys, 1);
    let mut i = 0u64;
    let mut g = c.benchmark_group("log");
    g.throughput(Throughput::Elements(1));
    g.bench_function("lookup_hit", |b| {
        b.iter(|| {
            i += 1;
            engine.get(APP, &key(i % keys), keys + i).unwrap()
        })
    });
    g.finish();
}

fn clean_pass(c: &mut Criterion) {
    let mut g = c.benchmark_group("cleaner");
    for n in [2, 10, 20] {
        g.bench_function(format!("exclusive_pass_n{n}"), |b| {
            b.iter_batched(
                || filled(config(64, n), 12_000, 3),
                |engine| {
                    engine
                        .core()
                        .clean(PassMode::Exclusive, u64::MAX / 2)
                        .unwrap()
                },
                BatchSize::PerIteration,
            )
        });
    }
    g.finish();
}

criterion_group!(
    name = benches;
    config = Criterion::default()
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(2))
        .sample_size(10);
    targets = append, lookup, clean_pass
);
criterion_main!(benches);
