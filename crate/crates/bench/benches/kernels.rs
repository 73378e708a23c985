use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use lightning_core::{
    attention_inputs, oracle_forward, tiled_backward, tiled_forward, upstream_grad, Decay, Seed,
};

fn forward(c: &mut Criterion) {
    let decay = Decay::new(0.9).unwrap();
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for n in [512usize, 1024, 2048] {
        let (q, k, v) = attention_inputs::<f32>(n, 64, 64, Seed(0));
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("tiled", n), &n, |b, _| {
            b.iter(|| tiled_forward(black_box(&q), &k, &v, decay, 64).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("oracle", n), &n, |b, _| {
            b.iter(|| oracle_forward(black_box(&q), &k, &v, decay).unwrap())
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let decay = Decay::new(0.9).unwrap();
    let mut group = c.benchmark_group("backward");
    group.sample_size(10);
    for n in [1024usize, 4096] {
        let (q, k, v) = attention_inputs::<f32>(n, 64, 64, Seed(0));
        let d_out = upstream_grad::<f32>(n, 64, Seed(0));
        group.throughput(Throughput::Elements(n as u64));
        for block in [32usize, 64, 128] {
            group.bench_with_input(
                BenchmarkId::new(format!("tiled-B{block}"), n),
                &n,
                |b, _| {
                    b.iter(|| tiled_backward(black_box(&q), &k, &v, &d_out, decay, block).unwrap())
                },
            );
        }
    }
    group.finish();
}

criterion_group!(benches, forward, backward);
criterion_main!(benches);
