use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lsqdiff::adjoint::{vjp_lstsq, Cotangent};
use lsqdiff::par;
use lsqdiff::testkit::{random_problem, seeded_normal};
use lsqdiff::SolveConfig;

/// One forward solve plus one pullback on a seeded 200×50 problem.
fn gradient_sweep_item(seed: &u64) -> f64 {
    let (problem, _) = random_problem(200, 50, 1e3, 0.1, *seed);
    let cfg = SolveConfig::with_tol(1e-10);
    let (_, pullback) = vjp_lstsq(&problem, &cfg).expect("forward solve");
    let cot = Cotangent::new(seeded_normal(50, *seed + 1)).expect("finite cotangent");
    pullback.apply(&cot).expect("pullback").grad_lambda
}

fn seed_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    for count in [4usize, 16] {
        let seeds: Vec<u64> = (0..count as u64).collect();
        group.bench_with_input(BenchmarkId::new("sequential", count), &seeds, |b, s| {
            b.iter(|| par::map_seq(s, gradient_sweep_item))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("rayon", count), &seeds, |b, s| {
            b.iter(|| par::map_par(s, gradient_sweep_item))
        });
    }
    group.finish();
}

criterion_group!(benches, seed_sweep);
criterion_main!(benches);
