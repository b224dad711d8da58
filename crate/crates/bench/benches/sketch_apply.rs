//! Wall-clock cost of building and applying each sketch kind, and of the
//! sparsity sweep that trades convergence rate against sketching cost.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use nalgebra::DMatrix;
use newton_less::leverage::exact_leverage_ridge;
use newton_less::rng::Stream;
use newton_less::sketch::{apply_sketch, build_sketch, Scaling, SketchKind, SketchSpec};

fn data(n: usize, d: usize) -> DMatrix<f64> {
    let mut s = Stream::new(7);
    DMatrix::from_fn(n, d, |_, _| s.next_normal())
}

fn bench_kinds(c: &mut Criterion) {
    let n = 2048;
    let d = 32;
    let m = 256;
    let a = data(n, d);
    let profile = exact_leverage_ridge(&a, 0.0).unwrap();
    let mut group = c.benchmark_group("sketch_apply");
    for kind in [
        SketchKind::Gaussian,
        SketchKind::Rademacher,
        SketchKind::Less,
        SketchKind::LessUniform,
        SketchKind::Rrs,
        SketchKind::RrsLev,
        SketchKind::Srht,
    ] {
        group.bench_function(BenchmarkId::from_parameter(kind.label()), |b| {
            let mut seed = 0u64;
            b.iter(|| {
                seed += 1;
                let spec = SketchSpec::new(kind, m)
                    .with_scaling(Scaling::Practical)
                    .with_seed(seed);
                let op = build_sketch(&spec, n, d, Some(&profile)).unwrap();
                black_box(apply_sketch(&op, &a).unwrap())
            });
        });
    }
    group.finish();
}

fn bench_row_density(c: &mut Criterion) {
    let n = 2048;
    let d = 32;
    let m = 256;
    let a = data(n, d);
    let mut group = c.benchmark_group("less_uniform_density");
    for s in [1usize, 8, 32, 128] {
        group.bench_with_input(BenchmarkId::from_parameter(s), &s, |b, &s| {
            let mut seed = 0u64;
            b.iter(|| {
                seed += 1;
                let spec = SketchSpec::new(SketchKind::LessUniform, m)
                    .with_nnz(s)
                    .with_scaling(Scaling::Practical)
                    .with_seed(seed);
                let op = build_sketch(&spec, n, d, None).unwrap();
                black_box(apply_sketch(&op, &a).unwrap())
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_kinds, bench_row_density);
criterion_main!(benches);
