use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use forgeloc::layers::{conv2d, maxpool2x2, upsample2x};
use forgeloc_bench::{uniform, uniform_leaf};
use std::hint::black_box;

/// `(cin, cout)` pairs: one narrow layer of the desk model, one wide layer.
const CHANNELS: [(usize, usize); 2] = [(8, 8), (32, 64)];

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3_64x64");
    for (cin, cout) in CHANNELS {
        let x = uniform(&[4, 64, 64, cin], 1);
        let k = uniform(&[3, 3, cin, cout], 2);
        group.throughput(Throughput::Elements((4 * 64 * 64 * 9 * cin * cout) as u64));
        group.bench_with_input(BenchmarkId::new("forward", format!("{cin}x{cout}")), &(x, k), |b, (x, k)| {
            b.iter(|| black_box(conv2d(x, k, None).unwrap()))
        });
        let x = uniform_leaf(&[4, 64, 64, cin], 1);
        let k = uniform_leaf(&[3, 3, cin, cout], 2);
        group.bench_with_input(BenchmarkId::new("forward_backward", format!("{cin}x{cout}")), &(x, k), |b, (x, k)| {
            b.iter(|| conv2d(x, k, None).unwrap().sum().unwrap().backward().unwrap())
        });
    }
    group.finish();
}

fn resample(c: &mut Criterion) {
    let x = uniform(&[4, 64, 64, 16], 3);
    c.bench_function("maxpool2x2_64x64x16", |b| b.iter(|| black_box(maxpool2x2(&x).unwrap())));
    c.bench_function("upsample2x_64x64x16", |b| b.iter(|| black_box(upsample2x(&x).unwrap())));
}

criterion_group!(benches, conv, resample);
criterion_main!(benches);
