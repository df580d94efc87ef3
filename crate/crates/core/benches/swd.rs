use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use swoks_core::detector::{Detector, DetectorConfig, NoProbe};
use swoks_core::ot::{sample_unit_directions, sliced_wasserstein, sliced_wasserstein_sequential, PointSet};

fn cloud(n: usize, dim: usize, shift: f64, rng: &mut ChaCha8Rng) -> PointSet {
    let data = (0..n * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) + shift)
        .collect();
    PointSet::from_flat(data, dim).unwrap()
}

fn bench_swd(c: &mut Criterion) {
    let mut group = c.benchmark_group("sliced_wasserstein");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(n, dim, m) in &[(60, 10, 128), (240, 10, 128), (240, 34, 512)] {
        let a = cloud(n, dim, 0.0, &mut rng);
        let b = cloud(n, dim, 0.3, &mut rng);
        let dirs = sample_unit_directions(dim, m, 1).unwrap();
        let id = format!("n{n}_d{dim}_m{m}");
        group.bench_with_input(BenchmarkId::new("parallel", &id), &(), |bch, _| {
            bch.iter(|| sliced_wasserstein(black_box(&a), black_box(&b), &dirs).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", &id), &(), |bch, _| {
            bch.iter(|| sliced_wasserstein_sequential(black_box(&a), black_box(&b), &dirs).unwrap())
        });
    }
    group.finish();
}

fn bench_ingest(c: &mut Criterion) {
    let cfg = DetectorConfig {
        history_len: 60,
        swd_history_len: 25,
        alpha: 0.001,
        beta: 1.1,
        stable_phase: 3000,
        n_projections: 128,
        probe_swd_samples: 10,
        master_seed: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stream: Vec<(Vec<f64>, usize, f64)> = (0..4000)
        .map(|_| {
            let phi = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            (phi, rng.random_range(0..2), if rng.random_bool(0.5) { 1.0 } else { -0.1 })
        })
        .collect();
    c.bench_function("detector_ingest_4000_steps", |b| {
        b.iter(|| {
            let mut det = Detector::new(cfg.clone(), 10).unwrap();
            for (phi, a, r) in &stream {
                det.ingest(phi, *a, *r, &mut NoProbe).unwrap();
            }
            black_box(det.t())
        })
    });
}

criterion_group!(benches, bench_swd, bench_ingest);
criterion_main!(benches);
