use std::f64::consts::FRAC_PI_4;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use micromaser::collision::{hyperexp_from_superbunched, renewal_density, UniformGrid};
use micromaser::fock::steady_state_nullspace;
use micromaser::master::{full_liouvillian, steady_state_analytic, MarkovEvolution};
use micromaser::reversal::{crooks_dual_per_reservoir, fluctuation_check};
use micromaser::trajectory::{build_channels, simulate_ensemble, ArrivalMode};
use micromaser::{ArrivalConvention, DensityMatrix, MicromaserParams, RenewalProcess, TruncationConfig};

fn params(nbar: f64, p: f64, n_max: usize) -> MicromaserParams {
    MicromaserParams::new(1.0, 1.0, nbar, 5.0, p, FRAC_PI_4, TruncationConfig::new(n_max, 1e-6).unwrap()).unwrap()
}

fn steady_state(c: &mut Criterion) {
    let p = params(0.5, 0.8, 60);
    let gen = full_liouvillian(&p).unwrap();
    c.bench_function("nullspace n_max=60", |b| b.iter(|| steady_state_nullspace(black_box(&gen)).unwrap()));
    c.bench_function("analytic n_max=60", |b| b.iter(|| steady_state_analytic(black_box(&p)).unwrap()));
}

fn evolution(c: &mut Criterion) {
    let p = params(0.5, 0.8, 40);
    let ev = MarkovEvolution::new(&full_liouvillian(&p).unwrap());
    let rho0 = DensityMatrix::fock(0, p.dim()).unwrap();
    c.bench_function("evolve n_max=40", |b| b.iter(|| ev.evolve(black_box(&rho0), 2.0).unwrap()));
}

fn trajectories(c: &mut Criterion) {
    let p = params(0.5, 0.3, 40);
    let rho0 = DensityMatrix::fock(0, p.dim()).unwrap();
    let renewal = ArrivalMode::Renewal {
        process: RenewalProcess::new(hyperexp_from_superbunched(4.0, 1.0, p.rate).unwrap()),
        convention: ArrivalConvention::Stationary,
    };
    let mut group = c.benchmark_group("ensemble 1000x10");
    group.sample_size(20);
    group.bench_function("poisson", |b| {
        b.iter(|| simulate_ensemble(&p, &ArrivalMode::Poisson, &rho0, 1000, 10.0, black_box(1)).unwrap())
    });
    group.bench_function("renewal", |b| b.iter(|| simulate_ensemble(&p, &renewal, &rho0, 1000, 10.0, black_box(1)).unwrap()));
    group.finish();

    let records = simulate_ensemble(&p, &ArrivalMode::Poisson, &rho0, 1000, 10.0, 2).unwrap();
    let duals = crooks_dual_per_reservoir(&build_channels(&p).unwrap(), &p).unwrap();
    c.bench_function("fluctuation audit 1000 records", |b| {
        b.iter(|| {
            records
                .iter()
                .map(|r| fluctuation_check(r, &p, &duals).unwrap().deviation())
                .fold(0.0, f64::max)
        })
    });
}

fn volterra(c: &mut Criterion) {
    let w = hyperexp_from_superbunched(4.0, 0.2, 1.0).unwrap();
    let grid = UniformGrid::new(10.0, 1e-3).unwrap();
    let mut group = c.benchmark_group("renewal density");
    group.sample_size(10);
    group.bench_function("10^4 steps", |b| b.iter(|| renewal_density(black_box(&w), grid).unwrap()));
    group.finish();
}

criterion_group!(benches, steady_state, evolution, trajectories, volterra);
criterion_main!(benches);
