use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use lipbound_bench::{pyramid, sinusoid};
use lipbound_core::quadrature::surface_integral;
use lipbound_core::verify::named_volume_field;
use lipbound_core::{build_grid, recover_weak_gradient, BoundaryField, LegendreBasis, Rect, TestFamily};

fn grids(c: &mut Criterion) {
    let smooth = sinusoid().unwrap();
    let ridged = pyramid().unwrap();
    c.bench_function("build_grid/sinusoid/order12/ref2", |b| {
        b.iter(|| build_grid(black_box(&smooth), 12, 2).unwrap())
    });
    c.bench_function("build_grid/pyramid/order12/ref2", |b| {
        b.iter(|| build_grid(black_box(&ridged), 12, 2).unwrap())
    });
}

fn integrals(c: &mut Criterion) {
    let p = sinusoid().unwrap();
    let grid = build_grid(&p, 12, 2).unwrap();
    let f = BoundaryField::trace_of(&named_volume_field("exp-cos").unwrap());
    c.bench_function("surface_integral/sinusoid/exp-cos", |b| {
        b.iter(|| surface_integral(&p, &grid, black_box(&f)).unwrap())
    });
}

fn recovery(c: &mut Criterion) {
    let p = sinusoid().unwrap();
    let support = Rect::new((-0.9, 0.9), (-0.9, 0.9));
    let grid = build_grid(&p, 12, 1).unwrap();
    let f = BoundaryField::trace_of(&named_volume_field("sin-cos").unwrap());
    let family = TestFamily::bump_legendre(support, 6, 3);
    let basis = LegendreBasis::new(support, 4);
    let mut g = c.benchmark_group("recovery");
    g.sample_size(10);
    g.bench_function("sinusoid/degree4", |b| {
        b.iter(|| recover_weak_gradient(&p, &grid, black_box(&f), &family, &basis).unwrap())
    });
    g.finish();
}

criterion_group!(benches, grids, integrals, recovery);
criterion_main!(benches);
