use std::f64::consts::FRAC_PI_2;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use segfb_bench::{exact_pair, pair_boundary, unit_box};
use segfb_core::almgren::{frequency_n, FrequencyConfig};
use segfb_core::flatness::{measure_flatness, Region};
use segfb_core::linearized::{solve_linearized, LinearizedBoundary, LinearizedConfig};
use segfb_core::solver::{solve_segregated, SolveConfig};
use segfb_core::spectral::{lambda1_cap, CapProblem};

fn solver(c: &mut Criterion) {
    let b = pair_boundary(1.0 / 16.0);
    let cfg = SolveConfig::default();
    let mut g = c.benchmark_group("solver");
    g.sample_size(10);
    g.bench_function("segregated h=1/16", |bch| bch.iter(|| solve_segregated(black_box(&b), &cfg).unwrap()));
    g.finish();
}

fn frequency(c: &mut Criterion) {
    let u = exact_pair(1.0 / 32.0);
    let cfg = FrequencyConfig::default();
    let mut g = c.benchmark_group("almgren");
    g.sample_size(10);
    g.bench_function("frequency 3 radii h=1/32", |bch| {
        bch.iter(|| frequency_n(black_box(&u), &[0.0, 0.0], &[0.25, 0.375, 0.5], &cfg).unwrap())
    });
    g.finish();
}

fn linearized(c: &mut Criterion) {
    let b = LinearizedBoundary::from_fns(unit_box(1.0 / 16.0), |x| 0.1 + 0.2 * x[0], |x| 0.1 + 0.2 * x[0] + 0.1 * x[2])
        .unwrap();
    let cfg = LinearizedConfig::default();
    let mut g = c.benchmark_group("linearized");
    g.sample_size(10);
    g.bench_function("solve h=1/16", |bch| bch.iter(|| solve_linearized(black_box(&b), &cfg).unwrap()));
    g.finish();
}

fn spectral(c: &mut Criterion) {
    let p = CapProblem::cap(FRAC_PI_2, 32).unwrap();
    let mut g = c.benchmark_group("spectral");
    g.sample_size(10);
    g.bench_function("half cap 32 rings", |bch| bch.iter(|| lambda1_cap(black_box(&p)).unwrap()));
    g.finish();
}

fn flatness(c: &mut Criterion) {
    let u = exact_pair(1.0 / 32.0);
    let region = Region::ball(&[0.0, 0.0], 1.0);
    c.bench_function("flatness width h=1/32", |bch| {
        bch.iter(|| measure_flatness(black_box(&u), &[0.0, 1.0], 1.0, &region).unwrap())
    });
}

criterion_group!(benches, solver, frequency, linearized, spectral, flatness);
criterion_main!(benches);
