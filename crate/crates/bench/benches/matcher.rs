use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gdlnn::model::{embed_all, Activation};
use gdlnn::{Pattern, DEFAULT_BUDGET};
use gdlnn_bench::{ba_training_set, house};

fn matcher(c: &mut Criterion) {
    let d = ba_training_set(100, 0);
    let pat = Pattern::compile(&house());
    c.bench_function("house_satisfies_100_graphs", |b| {
        b.iter(|| {
            d.graphs()
                .iter()
                .filter(|g| pat.satisfies(black_box(g), DEFAULT_BUDGET).unwrap())
                .count()
        })
    });
    c.bench_function("house_count_100_graphs", |b| {
        b.iter(|| d.graphs().iter().map(|g| pat.count(black_box(g), DEFAULT_BUDGET).unwrap()).sum::<u64>())
    });
    let patterns = vec![pat; 8];
    c.bench_function("embed_100_graphs_8_programs", |b| {
        b.iter(|| embed_all(black_box(d.graphs()), &patterns, Activation::Sigma, DEFAULT_BUDGET).unwrap())
    });
}

criterion_group!(benches, matcher);
criterion_main!(benches);
