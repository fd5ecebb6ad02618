//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p micromaser --test acceptance`.

use std::f64::consts::{FRAC_PI_4, PI};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use micromaser::collision::{
    hyperexp_from_superbunched, renewal_density, ArrivalConvention, RenewalProcess, UniformGrid, WaitingTimeDistribution,
};
use micromaser::correlations::{duality_report, DualityMode};
use micromaser::fock::{steady_state_nullspace, trace_distance, DensityMatrix, Superoperator, TruncationConfig, C64};
use micromaser::master::{
    full_liouvillian, memory_kernel_laplace, steady_state_analytic, suggest_n_max, superbunched_limit_steady_state,
    superbunched_steady_state, weak_coupling_generator, MarkovEvolution, MicromaserParams,
};
use micromaser::reversal::{
    crooks_dual_per_reservoir, fluctuation_check, fluctuation_check_renewal, steady_state_dual_probability_check,
};
use micromaser::trajectory::{build_channels, ensemble_average, simulate_ensemble, ArrivalMode};
use micromaser::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

fn params(gamma: f64, nbar: f64, rate: f64, p: f64, theta: f64, n_max: usize, tail_tol: f64) -> MicromaserParams {
    MicromaserParams::new(1.0, gamma, nbar, rate, p, theta, TruncationConfig::new(n_max, tail_tol).unwrap()).unwrap()
}

fn steady_state_oracles() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut largest_n_max = 0;
    for _ in 0..20 {
        let gamma = rng.random_range(0.2..2.0);
        let draft = params(
            gamma,
            rng.random_range(0.0..=2.0),
            rng.random_range(0.0..=10.0 * gamma),
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=PI),
            1,
            1e-12,
        );
        let n_max = suggest_n_max(&draft, 1e-12, 4000)?;
        largest_n_max = largest_n_max.max(n_max);
        let p = draft.with_trunc(TruncationConfig::new(n_max, 1e-12)?);
        let analytic = steady_state_analytic(&p)?;
        let null = steady_state_nullspace(&full_liouvillian(&p)?)?;
        worst = worst.max(trace_distance(&analytic, &null)?);
    }
    Ok(Verdict {
        pass: worst < 1e-9,
        detail: format!("max trace distance {worst:.2e} over 20 sets (largest n_max {largest_n_max}), need < 1e-9"),
    })
}

fn unravelling_consistency() -> Result<Verdict> {
    let sets = [
        (params(1.0, 0.0, 5.0, 1.0, FRAC_PI_4, 40, 1e-6), 0),
        (params(1.0, 0.5, 2.0, 0.3, 1.0, 40, 1e-6), 2),
    ];
    let times: Vec<f64> = (1..=10).map(|k| 0.5 * k as f64).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (p, m)) in sets.iter().enumerate() {
        let rho0 = DensityMatrix::fock(*m, p.dim())?;
        let avg = ensemble_average(p, &ArrivalMode::Poisson, &rho0, 10_000, &times, 100 + i as u64)?;
        let ev = MarkovEvolution::new(&full_liouvillian(p)?);
        let mut worst_ratio: f64 = 0.0;
        let mut worst_td: f64 = 0.0;
        for (k, &t) in times.iter().enumerate() {
            let td = trace_distance(&avg.states[k], &ev.evolve(&rho0, t)?)?;
            let bound = 0.02f64.max(5.0 * avg.trace_distance_std_err(k));
            worst_ratio = worst_ratio.max(td / bound);
            worst_td = worst_td.max(td);
        }
        pass &= worst_ratio < 1.0;
        parts.push(format!("set {}: max distance {worst_td:.4} ({:.0}% of bound)", i + 1, 100.0 * worst_ratio));
    }
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn correlation_duality() -> Result<Verdict> {
    let p = params(1.0, 0.0, 5.0, 1.0, FRAC_PI_4, 40, 1e-6);
    let grid: Vec<f64> = (0..=100).map(|k| 0.05 * k as f64).collect();
    let r = duality_report(&p, &grid, 10, DualityMode::Strict)?;
    Ok(Verdict {
        pass: r.max_correlation_deviation < 1e-8 && r.max_joint_asymmetry < 1e-8,
        detail: format!(
            "max |g2 - g1| = {:.2e}, max joint asymmetry = {:.2e}, need < 1e-8",
            r.max_correlation_deviation, r.max_joint_asymmetry
        ),
    })
}

fn fluctuation_identity() -> Result<Verdict> {
    let horizon = 5.0;
    let mut parts = Vec::new();
    let mut pass = true;
    let mut run = |label: &str, theta: f64, renewal: bool, seed: u64| -> Result<()> {
        let p = params(1.0, 0.5, 1.0, 0.3, theta, 40, 1e-6);
        let rho0 = steady_state_analytic(&p)?;
        let duals = crooks_dual_per_reservoir(&build_channels(&p)?, &p)?;
        let process = RenewalProcess::new(hyperexp_from_superbunched(4.0, 0.2, 1.0)?);
        let mode = if renewal {
            ArrivalMode::Renewal {
                process: process.clone(),
                convention: ArrivalConvention::Stationary,
            }
        } else {
            ArrivalMode::Poisson
        };
        let records = simulate_ensemble(&p, &mode, &rho0, 10_000, horizon, seed)?;
        let mut worst: f64 = 0.0;
        let mut max_jumps = 0;
        for r in &records {
            let check = if renewal {
                fluctuation_check_renewal(r, &p, &process, ArrivalConvention::Stationary, &duals)?
            } else {
                fluctuation_check(r, &p, &duals)?
            };
            worst = worst.max(check.deviation());
            max_jumps = max_jumps.max(r.jumps.len());
        }
        pass &= worst < 1e-9;
        parts.push(format!("{label}: max deviation {worst:.1e} (longest record {max_jumps} jumps)"));
        Ok(())
    };
    run("theta=1", 1.0, false, 200)?;
    run("theta=2", 2.0, false, 201)?;
    run("hyperexponential", 1.0, true, 202)?;
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn crooks_dual_equality() -> Result<Verdict> {
    let p = params(1.0, 0.0, 1.0, 1.0, FRAC_PI_4, 15, 1e-6);
    let rho0 = steady_state_analytic(&p)?;
    let records = simulate_ensemble(&p, &ArrivalMode::Poisson, &rho0, 1000, 3.0, 300)?;
    let mut worst: f64 = 0.0;
    for r in &records {
        worst = worst.max(steady_state_dual_probability_check(&p, r)?.relative_difference());
    }
    let jumps: usize = records.iter().map(|r| r.jumps.len()).sum();
    Ok(Verdict {
        pass: worst < 1e-9,
        detail: format!("max relative difference {worst:.1e} over 1000 records ({jumps} jumps), need < 1e-9"),
    })
}

/// Pair correlation of a stationary arrival stream: for each arrival that
/// leaves room for the full lag window, count later arrivals per lag bin.
fn pair_correlation(times: &[f64], horizon: f64, rate: f64, edges: &[f64]) -> Vec<f64> {
    let tau_max = *edges.last().unwrap();
    let bins = edges.len() - 1;
    let mut counts = vec![0.0; bins];
    let mut origins = 0.0;
    for (i, &s) in times.iter().enumerate() {
        if s + tau_max > horizon {
            break;
        }
        origins += 1.0;
        for &u in &times[i + 1..] {
            let lag = u - s;
            if lag >= tau_max {
                break;
            }
            let k = edges.partition_point(|&e| e <= lag) - 1;
            counts[k] += 1.0;
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, c)| c / (origins * rate * (edges[k + 1] - edges[k])))
        .collect()
}

fn renewal_machinery() -> Result<Verdict> {
    let rate = 1.0;
    let flat = renewal_density(&WaitingTimeDistribution::exponential(rate)?, UniformGrid::new(10.0 / rate, 0.025 / rate)?)?;
    let flat_err = flat.g.iter().map(|g| (g - 1.0).abs()).fold(0.0, f64::max);

    let (amp, decay) = (4.0, rate / 5.0);
    let wtd = hyperexp_from_superbunched(amp, decay, rate)?;
    let grid = UniformGrid::new(10.0 / rate, 1e-3 / rate)?;
    let g = renewal_density(&wtd, grid)?;
    let target = |t: f64| amp * (-decay * t).exp() + 1.0;
    let trip_err = g.g.iter().zip(grid.times()).map(|(x, t)| (x - target(t)).abs()).fold(0.0, f64::max);

    // 100 independent stationary streams of 1000 arrivals each.
    let process = RenewalProcess::new(wtd);
    let edges: Vec<f64> = (0..=10).map(|k| 0.5 * k as f64 / rate).collect();
    let batches: Vec<Vec<f64>> = (0..100u64)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(600 + b);
            let horizon = 1000.0 / rate;
            let times = process.sample_arrivals(horizon, ArrivalConvention::Stationary, &mut rng);
            pair_correlation(&times, horizon, rate, &edges)
        })
        .collect();
    let arrivals = 100.0 * 1000.0;
    let times = grid.times();
    let mut worst_sigma: f64 = 0.0;
    for k in 0..edges.len() - 1 {
        let vals: Vec<f64> = batches.iter().map(|b| b[k]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        let se = (var / vals.len() as f64).sqrt();
        // Bin average of the Volterra solution by the trapezoid rule.
        let inside: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= edges[k] - 1e-12 && times[i] <= edges[k + 1] + 1e-12).collect();
        let mut integral = 0.0;
        for w in inside.windows(2) {
            integral += 0.5 * (times[w[1]] - times[w[0]]) * (g.g[w[0]] + g.g[w[1]]);
        }
        let expect = integral / (edges[k + 1] - edges[k]);
        worst_sigma = worst_sigma.max((mean - expect).abs() / se);
    }
    Ok(Verdict {
        pass: flat_err < 1e-8 && trip_err < 1e-6 && worst_sigma < 3.0,
        detail: format!(
            "exponential |g - 1| = {flat_err:.1e} (< 1e-8); round trip {trip_err:.1e} (< 1e-6); \
             pair statistics worst bin {worst_sigma:.2} sigma (< 3) from {arrivals:.0} arrivals"
        ),
    })
}

fn superbunched_steady_state_check() -> Result<Verdict> {
    let p = params(1.0, 0.0, 1.0, 1.0, FRAC_PI_4, 40, 1e-6);
    let (amp, decay) = (4.0, 1.0 / 200.0);
    let mode = ArrivalMode::Renewal {
        process: RenewalProcess::new(hyperexp_from_superbunched(amp, decay, p.rate)?),
        convention: ArrivalConvention::Stationary,
    };
    let avg = ensemble_average(&p, &mode, &DensityMatrix::fock(0, p.dim())?, 10_000, &[50.0], 700)?;
    let limit = superbunched_limit_steady_state(&p, amp)?;
    let literal = superbunched_steady_state(&p, amp)?;
    let td = trace_distance(&avg.states[0], &limit)?;
    let td_literal = trace_distance(&avg.states[0], &literal)?;
    Ok(Verdict {
        pass: td < 0.03 && avg.warning.is_none(),
        detail: format!(
            "distance to the small-Gamma mixture {td:.4} (< 0.03, SE {:.4}); \
             with the burst component pumped at A R instead of (1 + A) R: {td_literal:.4}",
            avg.trace_distance_std_err(0)
        ),
    })
}

fn low_sector_difference(theta: f64) -> Result<f64> {
    let p = params(1.0, 0.5, 1.0, 0.3, theta, 10, 0.5);
    let diff = full_liouvillian(&p)?.sub(&weak_coupling_generator(&p)?);
    let d = p.dim();
    let mut worst: f64 = 0.0;
    for r in 0..d * d {
        let (i, j) = (r % d, r / d);
        if i > 5 || j > 5 {
            continue;
        }
        for c in 0..d * d {
            let (k, l) = (c % d, c / d);
            if k <= 5 && l <= 5 {
                worst = worst.max(diff.get(r, c).norm());
            }
        }
    }
    Ok(worst)
}

fn weak_coupling_scaling() -> Result<Verdict> {
    let coarse = low_sector_difference(1e-2)?;
    let fine = low_sector_difference(1e-3)?;
    let ratio = coarse / fine;
    Ok(Verdict {
        pass: ratio > 5e3 && ratio < 2e4,
        detail: format!("difference {coarse:.3e} at 1e-2, {fine:.3e} at 1e-3, ratio {ratio:.4e} (within 2x of 1e4)"),
    })
}

fn poisson_kernel() -> Result<Verdict> {
    let p = params(1.0, 0.4, 2.0, 0.6, 1.3, 20, 0.5);
    let wtd = WaitingTimeDistribution::exponential(p.rate)?;
    let identity = Superoperator::identity(p.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let s = C64::new(rng.random_range(1e-3..10.0), rng.random_range(-10.0..10.0));
        worst = worst.max(memory_kernel_laplace(&p, &wtd, s)?.max_abs_diff(&identity));
    }
    Ok(Verdict {
        pass: worst < 1e-10,
        detail: format!("max |K(s) - 1| = {worst:.1e} over 20 points, need < 1e-10"),
    })
}

fn main() -> ExitCode {
    type Check = fn() -> Result<Verdict>;
    let criteria: [(&str, Check, u64); 9] = [
        ("steady-state oracle equivalence", steady_state_oracles, 60),
        ("unravelling consistency", unravelling_consistency, 300),
        ("correlation duality", correlation_duality, 60),
        ("detailed fluctuation identity", fluctuation_identity, 300),
        ("steady-state dual equality", crooks_dual_equality, 60),
        ("renewal machinery", renewal_machinery, 120),
        ("super-bunched steady state", superbunched_steady_state_check, 600),
        ("weak-coupling limit", weak_coupling_scaling, 10),
        ("Poissonian kernel triviality", poisson_kernel, 10),
    ];
    let mut failures = 0;
    for (k, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let (pass, detail) = match verdict {
            Ok(v) => (v.pass && in_time, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} [{}] {name}: {detail} [{:.2}s of {budget}s]",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
