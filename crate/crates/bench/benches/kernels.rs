use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use monocnn_bench::{batch, mono, normals, standard};
use monocnn_core::codec::{decode, encode};
use monocnn_core::ops::{conv2d_backward, conv2d_forward, ConvGeometry};
use monocnn_core::{expand_bank, FgfConfig};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for (cin, cout, side) in [(1, 16, 28), (16, 32, 14), (32, 64, 7)] {
        let geom = ConvGeometry::same(cin, cout, 3);
        let x = normals(&[8, cin, side, side], 1);
        let w = normals(&[cout, cin, 3, 3], 2);
        let g = normals(&[8, cout, side, side], 3);
        let id = format!("{cin}x{side}x{side}->{cout}");
        group.throughput(Throughput::Elements(8));
        group.bench_with_input(BenchmarkId::new("forward", &id), &(), |b, _| {
            b.iter(|| conv2d_forward(black_box(&x), &w, &geom).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("backward", &id), &(), |b, _| {
            b.iter(|| conv2d_backward(black_box(&x), &w, &g, &geom).unwrap())
        });
    }
    group.finish();
}

fn bank(c: &mut Criterion) {
    let mut group = c.benchmark_group("expand_bank");
    let seed = normals(&[32, 3, 3], 4);
    for m in [16, 64, 256] {
        let cfg = FgfConfig::monomial(7, m);
        group.bench_with_input(BenchmarkId::from_parameter(m), &cfg, |b, cfg| {
            b.iter(|| expand_bank(black_box(&seed), cfg).unwrap())
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    let x = batch(32, 5);
    group.throughput(Throughput::Elements(32));
    for (name, model) in [("mono-tiny", mono(1)), ("std-tiny", standard(1))] {
        group.bench_function(name, |b| b.iter(|| model.forward(black_box(&x), false).unwrap()));
    }
    group.finish();
}

fn codec(c: &mut Criterion) {
    let mut group = c.benchmark_group("mono1");
    let model = mono(2);
    let packet = encode(&model).unwrap();
    group.throughput(Throughput::Bytes(packet.len() as u64));
    group.bench_function("encode", |b| b.iter(|| encode(black_box(&model)).unwrap()));
    // Decoding regenerates every bank.
    group.bench_function("decode", |b| b.iter(|| decode(black_box(&packet)).unwrap()));
    group.finish();
}

criterion_group!(benches, conv, bank, forward, codec);
criterion_main!(benches);
