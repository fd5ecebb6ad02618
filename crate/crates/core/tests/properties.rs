use nalgebra::DMatrix;
use proptest::prelude::*;

use micromaser::collision::{ancilla_map, kraus_operators, AtomicBranch, RenewalProcess, WaitingTimeDistribution};
use micromaser::fock::{steady_state_nullspace, trace_distance, DensityMatrix, TruncationConfig, C64};
use micromaser::master::{cavity_liouvillian, full_liouvillian, steady_state_analytic, suggest_n_max, MarkovEvolution, MicromaserParams};
use micromaser::reversal::{
    crooks_dual_per_reservoir, entropy_flows, fluctuation_check, reverse_trajectory, whole_steady_state_duals,
};
use micromaser::trajectory::{build_channels, read_dump, simulate_trajectory_poisson, write_dump, TrajectoryRecord};

fn params(gamma: f64, nbar: f64, rate: f64, p: f64, theta: f64, n_max: usize) -> MicromaserParams {
    MicromaserParams::new(1.0, gamma, nbar, rate, p, theta, TruncationConfig::new(n_max, 0.5).unwrap()).unwrap()
}

fn any_params(n_max: std::ops::Range<usize>) -> impl Strategy<Value = MicromaserParams> {
    (0.2..2.0f64, 0.0..2.0f64, 0.0..8.0f64, 0.0..=1.0f64, 0.0..3.0f64, n_max)
        .prop_map(|(g, nbar, r, p, theta, n)| params(g, nbar, r, p, theta, n))
}

/// Parameters with finite inverse temperatures on both reservoirs.
fn thermal_params() -> impl Strategy<Value = MicromaserParams> {
    (0.3..2.0f64, 0.05..1.5f64, 0.2..5.0f64, 0.05..0.95f64, 0.1..3.0f64)
        .prop_map(|(g, nbar, r, p, theta)| params(g, nbar, r, p, theta, 40))
}

fn record(p: &MicromaserParams, seed: u64) -> TrajectoryRecord {
    let rho = steady_state_analytic(p).unwrap();
    let pops = rho.populations();
    let start = pops.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    simulate_trajectory_poisson(p, start, 4.0, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kraus_set_is_complete(theta in 0.0..7.0f64, p in 0.0..=1.0f64, n_max in 2usize..40) {
        let ks = kraus_operators(theta, p, TruncationConfig::new(n_max, 0.5).unwrap()).unwrap();
        prop_assert!(ks.completeness_defect() < 1e-12);
        for n in 0..n_max {
            let total: f64 = AtomicBranch::ALL.iter().map(|&b| ks.operator(b).column_norm_sqr(n)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn choi_matrix_is_positive(theta in 0.0..7.0f64, p in 0.0..=1.0f64, n_max in 2usize..7) {
        let ks = kraus_operators(theta, p, TruncationConfig::new(n_max, 0.5).unwrap()).unwrap();
        let phi = ks.channel();
        let d = n_max + 1;
        let mut choi = DMatrix::<C64>::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                let mut e = DMatrix::<C64>::zeros(d, d);
                e[(i, j)] = C64::new(1.0, 0.0);
                let out = phi.apply(&e);
                for k in 0..d {
                    for l in 0..d {
                        choi[(i * d + k, j * d + l)] = out[(k, l)];
                    }
                }
            }
        }
        let min = choi.symmetric_eigenvalues().min();
        prop_assert!(min > -1e-9, "min eigenvalue {}", min);
    }

    #[test]
    fn generator_splits_into_cavity_and_collisions(p in any_params(2..30)) {
        let full = full_liouvillian(&p).unwrap();
        let split = cavity_liouvillian(&p).unwrap().add(&ancilla_map(&p.kraus().unwrap()).scale(p.rate));
        let scale = 1.0f64.max(full.max_abs());
        prop_assert!(full.max_abs_diff(&split) < 1e-10 * scale);
        prop_assert!(full.trace_annihilation_residual() < 1e-12 * scale);
    }

    #[test]
    fn channel_rates_complete(p in any_params(2..30)) {
        let rates = build_channels(&p).unwrap().decay_rates();
        let n_max = p.trunc.n_max();
        for (n, r) in rates.iter().enumerate().take(n_max) {
            let expect = p.gamma * (p.nbar + 1.0) * n as f64 + p.gamma * p.nbar * (n + 1) as f64 + p.rate;
            prop_assert!((r - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn records_balance_energy(p in any_params(5..30), seed in any::<u64>()) {
        let r = simulate_trajectory_poisson(&p, 2, 3.0, seed).unwrap();
        prop_assert_eq!(r.atom_quanta + r.bath_quanta, r.final_level as i64 - r.initial_level as i64);
        prop_assert!(r.jumps.windows(2).all(|w| w[0].time < w[1].time));
        prop_assert!(r.jumps.iter().all(|j| j.time > 0.0 && j.time < r.horizon));
    }

    #[test]
    fn dump_round_trip(p in any_params(5..30), seed in any::<u64>()) {
        let records: Vec<_> = (0..4).map(|k| simulate_trajectory_poisson(&p, k, 2.5, seed.wrapping_add(k as u64)).unwrap()).collect();
        let mut buf = Vec::new();
        write_dump(&records, &["seed = 1".to_string()], &mut buf).unwrap();
        prop_assert_eq!(read_dump(&buf[..]).unwrap(), records);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reversal_is_an_involution(p in thermal_params(), seed in any::<u64>()) {
        let r = record(&p, seed);
        let channels = build_channels(&p).unwrap();
        let per = crooks_dual_per_reservoir(&channels, &p).unwrap();
        let whole = whole_steady_state_duals(&channels, &steady_state_analytic(&p).unwrap()).unwrap();
        for map in [&per, &whole] {
            let twice = reverse_trajectory(&reverse_trajectory(&r, map).unwrap(), map).unwrap();
            prop_assert_eq!(&twice, &r);
        }
    }

    #[test]
    fn reversal_negates_the_energy_ledger(p in thermal_params(), seed in any::<u64>()) {
        let r = record(&p, seed);
        let map = crooks_dual_per_reservoir(&build_channels(&p).unwrap(), &p).unwrap();
        let rev = reverse_trajectory(&r, &map).unwrap();
        let (f, b) = (entropy_flows(&r, &p).unwrap(), entropy_flows(&rev, &p).unwrap());
        prop_assert_eq!(rev.atom_quanta, -r.atom_quanta);
        prop_assert_eq!(rev.bath_quanta, -r.bath_quanta);
        prop_assert!((f.ds_a + b.ds_a).abs() < 1e-12 && (f.ds_c + b.ds_c).abs() < 1e-12);
    }

    #[test]
    fn fluctuation_identity_holds(p in thermal_params(), seed in any::<u64>()) {
        let r = record(&p, seed);
        let map = crooks_dual_per_reservoir(&build_channels(&p).unwrap(), &p).unwrap();
        let check = fluctuation_check(&r, &p, &map).unwrap();
        prop_assert!(check.deviation() < 1e-9, "deviation {}", check.deviation());

        // The entropy balance carries no Rabi angle: the same record scored at
        // a different coupling gives the same ratio.
        let doubled = MicromaserParams { theta: 2.0 * p.theta, ..p };
        let map2 = crooks_dual_per_reservoir(&build_channels(&doubled).unwrap(), &doubled).unwrap();
        if let Ok(c2) = fluctuation_check(&r, &doubled, &map2) {
            if c2.log_ratio_measured.is_finite() {
                prop_assert!((c2.log_ratio_measured - check.log_ratio_measured).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn analytic_steady_state_is_the_null_vector(
        g in 0.3..2.0f64, nbar in 0.0..1.5f64, r in 0.0..6.0f64, p in 0.0..=1.0f64, theta in 0.0..3.0f64,
    ) {
        let draft = params(g, nbar, r, p, theta, 2);
        let n_max = suggest_n_max(&draft, 1e-12, 400).unwrap();
        let full = draft.with_trunc(TruncationConfig::new(n_max, 1e-12).unwrap());
        let a = steady_state_analytic(&full).unwrap();
        let b = steady_state_nullspace(&full_liouvillian(&full).unwrap()).unwrap();
        prop_assert!(trace_distance(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn evolution_is_a_semigroup(
        p in any_params(8..20),
        amps in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 6),
        s in 0.0..2.0f64,
        t in 0.0..2.0f64,
    ) {
        let d = p.dim();
        let mut psi = DMatrix::<C64>::zeros(d, 1);
        for (k, (re, im)) in amps.iter().enumerate() {
            psi[(k, 0)] = C64::new(*re, *im);
        }
        prop_assume!(psi.norm() > 1e-3);
        psi /= C64::new(psi.norm(), 0.0);
        let rho = DensityMatrix::from_matrix(&psi * psi.adjoint()).unwrap();
        let ev = MarkovEvolution::new(&full_liouvillian(&p).unwrap());
        let split = ev.evolve(&ev.evolve(&rho, s).unwrap(), t).unwrap();
        let joint = ev.evolve(&rho, s + t).unwrap();
        prop_assert!((split.matrix() - joint.matrix()).norm() < 1e-10);
        prop_assert!((joint.trace().re - 1.0).abs() < 1e-10);
        prop_assert!(joint.min_eigenvalue() > -1e-10);
    }

    #[test]
    fn residual_density_and_no_arrival(
        w in 0.05..0.95f64, r1 in 0.1..5.0f64, r2 in 0.1..5.0f64, t in prop::collection::vec(0.0..10.0f64, 8),
    ) {
        let process = RenewalProcess::new(WaitingTimeDistribution::hyperexponential(vec![w, 1.0 - w], vec![r1, r2]).unwrap());
        let mut t = t;
        t.sort_by(f64::total_cmp);
        for &x in &t {
            prop_assert!((process.residual_density(x) - process.rate() * process.survival(x)).abs() < 1e-12);
        }
        for pair in t.windows(2) {
            prop_assert!(process.no_arrival(pair[1]) <= process.no_arrival(pair[0]) + 1e-15);
        }
    }
}
