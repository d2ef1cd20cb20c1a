use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ugrid_bench::{iterate, l_shape};
use ugrid_core::multigrid::{vcycle, MgHierarchy};
use ugrid_core::{init_params, mg_solve, ugrid_iterate, SolveConfig};

fn cycles(c: &mut Criterion) {
    let mut g = c.benchmark_group("iteration");
    g.sample_size(20);
    let params = init_params(5, 8, 0);
    let cfg = SolveConfig::default();
    for n in [65, 129] {
        let p = l_shape(n);
        let u = iterate(n);
        let h = MgHierarchy::build(&p, None);
        g.bench_with_input(BenchmarkId::new("vcycle", n), &n, |b, _| {
            b.iter(|| vcycle(&p, black_box(&u), &h, 2, 2).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("ugrid_iterate", n), &n, |b, _| {
            b.iter(|| ugrid_iterate(black_box(&u), &p, &params, &cfg).unwrap())
        });
    }
    g.finish();
}

fn full_solves(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for n in [65, 129] {
        let p = l_shape(n);
        g.bench_with_input(BenchmarkId::new("classical_mg", n), &n, |b, _| {
            b.iter(|| mg_solve(black_box(&p), &SolveConfig::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, cycles, full_solves);
criterion_main!(benches);
