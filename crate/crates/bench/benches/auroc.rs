use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use progfuse_core::eval::auroc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    (scores, labels)
}

fn bench_auroc(c: &mut Criterion) {
    let mut group = c.benchmark_group("auroc");
    for &n in &[100usize, 1_000, 10_000, 100_000] {
        let (mut scores, mut labels) = instance(n, 3);
        // Guarantee both classes.
        labels[0] = true;
        labels[1] = false;
        // Heavy ties stress the tie-group path.
        for s in scores.iter_mut().step_by(3) {
            *s = (*s * 10.0).round() / 10.0;
        }
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| auroc(black_box(&scores), black_box(&labels)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_auroc);
criterion_main!(benches);
