//! Parallel kernels against the same code pinned to one worker.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use floquet_smoothing::averaging::{chi_autonomous, eta, HomologicalOptions};
use floquet_smoothing::diophantine::{sample_frequencies, scaled_minima, SetKind};
use floquet_smoothing::floquet::{multiplication_matrix, DrivenSystem, ForcingTerm, Trig};
use floquet_smoothing::par;
use floquet_smoothing::potentials::PotentialModel;
use floquet_smoothing::spectral::EigenBasis;
use floquet_smoothing::symbol_grid::{japanese, symbol_axis, SymbolGrade};

fn pair<R: Send>(c: &mut Criterion, name: &str, f: impl Fn() -> R + Sync + Send) {
    let mut g = c.benchmark_group(name);
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| black_box(f())));
    g.bench_function("sequential", |b| b.iter(|| par::sequential(|| black_box(f()))));
    g.finish();
}

fn measure(c: &mut Criterion) {
    let pts = sample_frequencies(2, 20_000, 1);
    pair(c, "diophantine_minima", || scaled_minima(&pts, 3.0, SetKind::Omega0, 50).unwrap());
}

fn homological(c: &mut Criterion) {
    let q = PotentialModel::pure_power(2.0).unwrap();
    let qq = q.clone();
    let p = move |x: f64, xi: f64| japanese(x).powf(1.5) * eta(qq.h0(x, xi));
    let axis = symbol_axis(8.0, 3.0, 0.25);
    let opts = HomologicalOptions { tolerance: 1.0, ..HomologicalOptions::default() };
    pair(c, "chi_autonomous", || chi_autonomous(&q, &p, SymbolGrade::new(0.0, 1.5), &axis, &axis, opts).unwrap());
}

fn monodromy(c: &mut Criterion) {
    let basis = EigenBasis::auto(&PotentialModel::pure_power(2.0).unwrap(), 96).unwrap();
    let a = multiplication_matrix(&basis, |x| japanese(x).powf(1.5));
    let term = ForcingTerm { matrix: a, wave: vec![1], trig: Trig::Cos, amplitude: 1.0 };
    let sys = DrivenSystem::new(basis.lambdas.clone(), vec![0.5 * (1.0 + 5f64.sqrt())], 0.01, vec![term], 2.0).unwrap();
    pair(c, "monodromy", || sys.monodromy(256).unwrap());
}

criterion_group!(benches, measure, homological, monodromy);
criterion_main!(benches);
