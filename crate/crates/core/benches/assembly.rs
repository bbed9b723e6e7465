use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cellhom::cell::{CellProblem, Grid};
use cellhom::density::{EnergySpec, PhaseField, TruncationLevel};
use cellhom::par;
use cellhom::solve::{multistart, SolverConfig};
use cellhom::tensor::Mat;

fn problem(k: usize, m: usize) -> CellProblem {
    let spec = EnergySpec::neo_hookean(PhaseField::laminate(1, 0.5, 1.0, 10.0));
    let grid = Grid::new(k, m).unwrap();
    CellProblem::new(spec, Mat::new(1.0, 0.5, 0.0, 1.0), TruncationLevel::new(64.0).unwrap(), grid).unwrap()
}

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble");
    for m in [16, 64] {
        let p = problem(2, m);
        let len = 2 * p.zero_field().values.len();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let mut grad = vec![0.0; len];
        let density = |e: usize, f: &Mat| p.spec.w_n_mu(p.mu(e), p.n, f, p.smoothing);
        group.bench_with_input(BenchmarkId::new("parallel", m), &m, |b, _| {
            b.iter(|| par::with_threads(0, || p.assemble(black_box(&x), &mut grad, density)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", m), &m, |b, _| {
            b.iter(|| p.assemble_seq(black_box(&x), &mut grad, density))
        });
    }
    group.finish();
}

fn multistarts(c: &mut Criterion) {
    let p = problem(1, 8);
    let config = SolverConfig::default();
    let mut group = c.benchmark_group("multistart");
    group.sample_size(10);
    for threads in [1, 0] {
        let label = if threads == 1 { "one-thread" } else { "all-cores" };
        group.bench_function(label, |b| {
            b.iter(|| par::with_threads(threads, || multistart(&p, &config, 4, 0.1, 7).unwrap().value))
        });
    }
    group.finish();
}

criterion_group!(benches, assembly, multistarts);
criterion_main!(benches);
