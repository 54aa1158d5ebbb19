use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use progfuse_core::gp::{fit_gp, heuristic_init, FitOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sparse_series(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut days: Vec<f64> = (0..85u32)
        .filter(|_| rng.gen_bool(n as f64 / 85.0))
        .map(f64::from)
        .collect();
    if days.len() < 3 {
        days = vec![0.0, 40.0, 84.0];
    }
    let values = days
        .iter()
        .map(|d| (d / 15.0).sin() + 0.1 * rng.gen_range(-1.0..1.0))
        .collect();
    (days, values)
}

fn bench_gp_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp_fit");
    for &n in &[15usize, 42, 70] {
        let (days, values) = sparse_series(n, 7);
        let options = FitOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(days.len()), &n, |b, _| {
            b.iter(|| {
                let bounds = heuristic_init(&days, &values).unwrap();
                fit_gp(black_box(&days), black_box(&values), &bounds, &options, 11).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_gp_fit);
criterion_main!(benches);
