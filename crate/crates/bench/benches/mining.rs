use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gdlnn::mining::{mine, MiningConfig};
use gdlnn_bench::ba_training_set;

fn mining(c: &mut Criterion) {
    let d = ba_training_set(40, 1);
    let cfg = MiningConfig {
        epsilon: 1.0,
        ..MiningConfig::default()
    };
    let mut group = c.benchmark_group("mine");
    group.sample_size(10);
    for i in [0, 1] {
        group.bench_function(format!("ba40_graph{i}"), |b| {
            b.iter(|| mine(&d, black_box(d.graph(i)), d.label(i), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, mining);
criterion_main!(benches);
