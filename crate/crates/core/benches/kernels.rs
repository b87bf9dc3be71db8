use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gpfractal::energy::KernelMatrix;
use gpfractal::fractal_sets::{Atom, SpatialSet};
use gpfractal::gp_sim::{cov_stationary_increments, uniform_grid, PathSampler};
use gpfractal::hitting::{path_min_distances, SmallBall};
use gpfractal::scale::ScaleFunction;

/// Runs `f` once on a single-thread pool and once on the default pool.
fn both_pools(c: &mut Criterion, name: &str, f: impl Fn() + Send + Sync) {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("threads", 1), |b| b.iter(|| single.install(&f)));
    group.bench_function(BenchmarkId::new("threads", rayon::current_num_threads()), |b| b.iter(&f));
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let gamma = ScaleFunction::power(0.5).unwrap();
    let grid = uniform_grid(0.0, 1.0, 1024);

    both_pools(c, "covariance_1024", || {
        black_box(cov_stationary_increments(&gamma, &grid).unwrap());
    });

    both_pools(c, "cholesky_1024", || {
        let cov = cov_stationary_increments(&gamma, &grid).unwrap();
        black_box(cov.factor().unwrap().n);
    });

    let cov = cov_stationary_increments(&gamma, &grid).unwrap();
    cov.factor().unwrap();
    both_pools(c, "paths_1024x3_x64", || {
        let sampler = PathSampler::new(&cov, 3, 1).unwrap();
        for p in 0..64 {
            black_box(sampler.sample(p));
        }
    });

    let ball = [SpatialSet::Ball { center: vec![0.0; 3], radius: 0.1 }];
    let e_grid = uniform_grid(0.9, 1.0, 512);
    both_pools(c, "hitting_512x3_x256", || {
        black_box(path_min_distances(&gamma, &Default::default(), &e_grid, 3, 256, 2, &ball).unwrap());
    });

    let sb = SmallBall {
        gamma: gamma.clone(),
        cov_model: Default::default(),
        t0: 0.05,
        z: vec![0.0, 0.0],
        n_paths: 4000,
        seed: 3,
        window_points: 33,
    };
    both_pools(c, "small_ball_x4000", || {
        black_box(sb.estimate(1.0 / 32.0).unwrap());
    });

    let atoms: Vec<Atom> = uniform_grid(0.2, 1.0, 1500).into_iter().map(|t| Atom { t, x: Vec::new() }).collect();
    both_pools(c, "energy_kernel_1500", || {
        black_box(KernelMatrix::stationary(atoms.clone(), &gamma, 1.5, 0.01).unwrap());
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
