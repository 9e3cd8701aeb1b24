//! Compares the sequential fallback against the rayon path on the hot
//! kernels. The dispatch takes the plain sequential loop whenever the
//! current pool has one thread, so a one-thread pool measures exactly what
//! a `--no-default-features` build runs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use terrascope_core::change::{change_vector_analysis, image_difference, multiscale_fuse};
use terrascope_core::cluster::classify_stack;
use terrascope_core::edge::{nonmax_suppress, sobel_gradient_field};
use terrascope_core::gstat::{general_g, raster_observations, SpatialWeights, WeightScheme};
use terrascope_core::raster::{stack_bands, RasterGrid};

const SIDE: usize = 512;

fn synthetic_grid(side: usize, phase: f64) -> RasterGrid {
    let mut values = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let x = c as f64 / 17.0 + phase;
            let y = r as f64 / 23.0;
            values.push(100.0 + 40.0 * (x.sin() + y.cos()) + ((r * 31 + c * 7) % 13) as f64);
        }
    }
    RasterGrid::new(side, side, values, None)
}

fn pools() -> [(&'static str, rayon::ThreadPool); 2] {
    let seq = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool");
    let par = rayon::ThreadPoolBuilder::new()
        .build()
        .expect("default pool");
    [("seq", seq), ("par", par)]
}

fn bench_edges(c: &mut Criterion) {
    let grid = synthetic_grid(SIDE, 0.0);
    let field = sobel_gradient_field(&grid).unwrap();
    let mut group = c.benchmark_group("sobel_nms_512");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &grid, |b, grid| {
            b.iter(|| {
                pool.install(|| {
                    let f = sobel_gradient_field(black_box(grid)).unwrap();
                    black_box(nonmax_suppress(&f, 1.0))
                })
            })
        });
    }
    drop(field);
    group.finish();
}

fn bench_classify(c: &mut Criterion) {
    let bands = vec![
        synthetic_grid(SIDE, 0.0),
        synthetic_grid(SIDE, 1.7),
        synthetic_grid(SIDE, 3.1),
    ];
    let stack = stack_bands(bands).unwrap();
    let mut group = c.benchmark_group("classify_512x3");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &stack, |b, stack| {
            b.iter(|| {
                pool.install(|| {
                    black_box(classify_stack(black_box(stack), 6, 42, 10, 1e-6, 20_000).unwrap())
                })
            })
        });
    }
    group.finish();
}

fn bench_change(c: &mut Criterion) {
    let a = synthetic_grid(SIDE, 0.0);
    let b_grid = synthetic_grid(SIDE, 0.4);
    let stack_a = stack_bands(vec![synthetic_grid(SIDE, 0.0), synthetic_grid(SIDE, 2.0)]).unwrap();
    let stack_b = stack_bands(vec![synthetic_grid(SIDE, 0.4), synthetic_grid(SIDE, 2.6)]).unwrap();

    let mut group = c.benchmark_group("change_512");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(
            BenchmarkId::new("difference", name),
            &(&a, &b_grid),
            |bench, (a, b)| {
                bench.iter(|| pool.install(|| black_box(image_difference(a, b, 2.0).unwrap())))
            },
        );
        group.bench_with_input(
            BenchmarkId::new("cva", name),
            &(&stack_a, &stack_b),
            |bench, (a, b)| {
                bench.iter(|| {
                    pool.install(|| black_box(change_vector_analysis(a, b, 2.0).unwrap()))
                })
            },
        );
        group.bench_with_input(
            BenchmarkId::new("multiscale_fuse_4", name),
            &(&a, &b_grid),
            |bench, (a, b)| {
                bench.iter(|| pool.install(|| black_box(multiscale_fuse(a, b, 4, 2.0).unwrap())))
            },
        );
    }
    group.finish();
}

fn bench_gstat(c: &mut Criterion) {
    // 128x128 keeps the pair list around 100k entries at d = 2.
    let grid = synthetic_grid(128, 0.0);
    let weights = SpatialWeights::from_raster(&grid, 2.0, WeightScheme::Binary).unwrap();
    let values: Vec<f64> = raster_observations(&grid).into_iter().map(|(_, v)| v).collect();

    let mut group = c.benchmark_group("general_g_128");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(
            BenchmarkId::from_parameter(name),
            &(&values, &weights),
            |bench, (values, weights)| {
                bench.iter(|| pool.install(|| black_box(general_g(values, weights).unwrap())))
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_edges, bench_classify, bench_change, bench_gstat);
criterion_main!(benches);
