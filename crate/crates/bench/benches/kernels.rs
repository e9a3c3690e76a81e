use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use effpot_bench::{ar1_trajectories, normals};
use effpot_core::covariance::{build_probe_plan, solve_covariance};
use effpot_core::equilibrium::{fit_potential, FitOptions, Histogram};
use effpot_core::integrators::{DampedVerlet, LangevinIntegrator};
use effpot_core::potentials::{make_builtin, BuiltinSpec};
use effpot_core::surrogate::normalized_acf;
use effpot_core::{rng, SimConfig};
use nalgebra::DMatrix;

fn steppers(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for (name, spec) in [
        ("quad3scale", BuiltinSpec::quad3scale(0.05, 0.001)),
        ("cossum20", BuiltinSpec::cossum(20)),
        ("mullerbrown2d", BuiltinSpec::mullerbrown2d(1e-5)),
    ] {
        let b = make_builtin(&spec).unwrap();
        let v = b.full();
        let d = b.dim();
        let mut stepper = DampedVerlet::from_config(&SimConfig::new(d, 0.05, 0.1, 1)).unwrap();
        let (mut q, mut p) = (vec![0.3; d], vec![0.0; d]);
        group.bench_function(format!("damped verlet {name}"), |bch| bch.iter(|| stepper.step(&*v, &mut q, &mut p)));
    }
    let b = make_builtin(&BuiltinSpec::quad3scale(0.05, 0.001)).unwrap();
    let v = b.component(0);
    let m = DMatrix::identity(1, 1);
    let mut lang = LangevinIntegrator::new(0.1, &m, &(&m * 0.1), 1.0).unwrap();
    let mut r = rng::stream(0, "bench-langevin", 0);
    let (mut q, mut p) = ([0.0], [0.0]);
    group.bench_function("langevin quadratic", |bch| bch.iter(|| lang.step(&*v, &mut q, &mut p, &mut r)));
    group.finish();
}

fn estimation(c: &mut Criterion) {
    let xs = normals(1_000_000, 2);
    c.bench_function("histogram 1e6 points, 200 bins", |b| {
        b.iter(|| Histogram::from_points(black_box(&xs), 1, &[(-5.0, 5.0, 200)]).unwrap())
    });
    let h = Histogram::from_points(&xs, 1, &[(-5.0, 5.0, 200)]).unwrap();
    let opts = FitOptions { basis_size: 30, ..Default::default() };
    c.bench_function("fit 1D, 30 splines", |b| b.iter(|| fit_potential(black_box(&h), 1.0, &opts).unwrap()));

    let pts = normals(400_000, 3);
    let h2 = Histogram::from_points(&pts, 2, &[(-4.0, 4.0, 80), (-4.0, 4.0, 80)]).unwrap();
    c.bench_function("fit 2D, 80x80", |b| b.iter(|| fit_potential(black_box(&h2), 1.0, &FitOptions::default()).unwrap()));

    let plan = build_probe_plan(5, 0.1).unwrap();
    let a = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
    let rhs = plan.analytic_rhs(&(&a * a.transpose() + DMatrix::identity(5, 5)));
    c.bench_function("covariance solve d=5", |b| b.iter(|| solve_covariance(&plan, black_box(&rhs), &[]).unwrap()));
}

fn diagnostics(c: &mut Criterion) {
    c.bench_function("normalized acf 500x500, 200 lags", |b| {
        b.iter_batched(|| ar1_trajectories(500, 500, 0.9), |t| normalized_acf(&t, 1, 0, 200).unwrap(), BatchSize::LargeInput)
    });
}

criterion_group!(benches, steppers, estimation, diagnostics);
criterion_main!(benches);
