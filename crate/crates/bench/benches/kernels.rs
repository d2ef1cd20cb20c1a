use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use ugrid_bench::{iterate, l_shape, SIDES};
use ugrid_core::net::{backward, forward_taped, init_params, MaskPyramid};
use ugrid_core::stencil::{conv3x3, L};

fn stencils(c: &mut Criterion) {
    let mut g = c.benchmark_group("stencil");
    for &n in SIDES {
        let p = l_shape(n);
        let u = iterate(n);
        g.throughput(Throughput::Elements((n * n) as u64));
        g.bench_with_input(BenchmarkId::new("conv3x3", n), &n, |b, _| b.iter(|| conv3x3(black_box(&u), &L)));
        g.bench_with_input(BenchmarkId::new("smooth", n), &n, |b, _| b.iter(|| p.smooth(black_box(&u)).unwrap()));
        g.bench_with_input(BenchmarkId::new("residual", n), &n, |b, _| {
            b.iter(|| p.residual(black_box(&u)).unwrap())
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let mut g = c.benchmark_group("ugrid_net");
    g.sample_size(20);
    let params = init_params(4, 8, 0);
    for &n in &SIDES[..2] {
        let p = l_shape(n);
        let r = p.residual(&iterate(n)).unwrap();
        let pyramid = MaskPyramid::build(p.mask(), params.depth).unwrap();
        g.bench_with_input(BenchmarkId::new("forward", n), &n, |b, _| {
            b.iter(|| forward_taped(black_box(&r), &pyramid, &params).unwrap())
        });
        let tape = forward_taped(&r, &pyramid, &params).unwrap();
        g.bench_with_input(BenchmarkId::new("backward", n), &n, |b, _| {
            b.iter(|| backward(&tape, &pyramid, &params, black_box(&r)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, stencils, network);
criterion_main!(benches);
