use std::io::BufWriter;

use micromaser::collision::{renewal_density, residual_and_survival, UniformGrid};
use micromaser::correlations::{duality_report, DualityMode};
use micromaser::fock::{steady_state_nullspace, trace_distance};
use micromaser::master::{
    full_liouvillian, steady_state_analytic, superbunched_limit_steady_state, superbunched_steady_state, MarkovEvolution,
};
use micromaser::reversal::{crooks_dual_per_reservoir, fluctuation_check, fluctuation_check_renewal};
use micromaser::trajectory::{average_records, build_channels, simulate_ensemble, write_dump, ArrivalMode};
use micromaser::{ArrivalConvention, DensityMatrix, MicromaserParams};

use crate::config::ArrivalsConfig;
use crate::output::{num, toml_num, RunContext};
use crate::CliError;

/// Largest fluctuation-identity deviation accepted by the audit.
const AUDIT_TOL: f64 = 1e-8;

fn mean_photons(rho: &DensityMatrix) -> f64 {
    rho.populations().iter().enumerate().map(|(n, p)| n as f64 * p).sum()
}

fn initial_state(ctx: &RunContext, params: &MicromaserParams, steady_default: bool) -> Result<DensityMatrix, CliError> {
    match ctx.config.initial_level {
        Some(level) if level > params.trunc.n_max() => Err(CliError::Config(format!(
            "initial_level {level} exceeds n_max = {}",
            params.trunc.n_max()
        ))),
        Some(level) => Ok(DensityMatrix::fock(level, params.dim())?),
        None if steady_default => Ok(steady_state_analytic(params)?),
        None => Ok(DensityMatrix::fock(0, params.dim())?),
    }
}

pub fn steady_state(ctx: &RunContext) -> Result<(), CliError> {
    let params = ctx.config.micromaser_params()?;
    let analytic = steady_state_analytic(&params)?;
    let null = steady_state_nullspace(&full_liouvillian(&params)?)?;
    let (a, b) = (analytic.populations(), null.populations());
    let rows: Vec<Vec<String>> = (0..params.dim())
        .map(|n| vec![n.to_string(), num(a[n]), num(b[n]), num((a[n] - b[n]).abs())])
        .collect();
    let max_diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let td = trace_distance(&analytic, &null)?;
    ctx.write_csv("steady-state.csv", &["n", "analytic", "nullspace", "abs_diff"], &rows)?;
    ctx.write_sidecar(&[
        ("mean_photons", toml_num(mean_photons(&analytic))),
        ("max_abs_diff", toml_num(max_diff)),
        ("trace_distance", toml_num(td)),
    ])?;
    println!("mean photon number {:.6}, trace distance between methods {td:.3e}", mean_photons(&analytic));
    Ok(())
}

pub fn evolve(ctx: &RunContext) -> Result<(), CliError> {
    if !ctx.config.is_exponential() {
        return Err(CliError::Config(
            "evolve integrates the Markovian master equation; it needs exponential arrivals".into(),
        ));
    }
    let params = ctx.config.micromaser_params()?;
    let times = ctx.config.times()?;
    let rho0 = initial_state(ctx, &params, false)?;
    let ev = MarkovEvolution::new(&full_liouvillian(&params)?);
    let mut columns = vec!["t".to_string(), "mean_n".to_string()];
    columns.extend((0..params.dim()).map(|n| format!("p{n}")));
    let mut rows = Vec::with_capacity(times.len());
    let mut last = rho0.clone();
    for &t in &times {
        last = ev.evolve(&rho0, t)?;
        let mut row = vec![num(t), num(mean_photons(&last))];
        row.extend(last.populations().into_iter().map(num));
        rows.push(row);
    }
    let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
    ctx.write_csv("evolve.csv", &columns, &rows)?;
    ctx.write_sidecar(&[("final_mean_photons", toml_num(mean_photons(&last)))])?;
    println!("mean photon number at t = {}: {:.6}", times.last().unwrap(), mean_photons(&last));
    Ok(())
}

fn arrival_mode(ctx: &RunContext) -> Result<ArrivalMode, CliError> {
    Ok(match ctx.config.arrival_process()? {
        Some(process) if !ctx.config.is_exponential() => ArrivalMode::Renewal {
            process,
            convention: ctx.config.convention(),
        },
        _ => ArrivalMode::Poisson,
    })
}

pub fn trajectories(ctx: &RunContext) -> Result<(), CliError> {
    let params = ctx.config.micromaser_params()?;
    let times = ctx.config.times()?;
    let n_traj = ctx.config.n_traj()?;
    let rho0 = initial_state(ctx, &params, false)?;
    let mode = arrival_mode(ctx)?;
    let horizon = times.last().copied().filter(|&t| t > 0.0).unwrap_or(1.0);
    let records = simulate_ensemble(&params, &mode, &rho0, n_traj, horizon, ctx.config.seed)?;
    let avg = average_records(&records, &times, params.dim())?;

    let dump_path = ctx.path("trajectories.dump");
    let file = std::fs::File::create(&dump_path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dump_path.display())))?;
    write_dump(&records, &ctx.header_lines(), BufWriter::new(file))?;

    // Reference states to compare the ensemble against.
    let mut references: Vec<(&str, Vec<DensityMatrix>)> = Vec::new();
    match &ctx.config.arrivals {
        ArrivalsConfig::Exponential { .. } => {
            let ev = MarkovEvolution::new(&full_liouvillian(&params)?);
            let states = times.iter().map(|&t| ev.evolve(&rho0, t)).collect::<Result<_, _>>()?;
            references.push(("markov_distance", states));
        }
        ArrivalsConfig::Superbunched { amplitude, .. } => {
            let limit = superbunched_limit_steady_state(&params, *amplitude)?;
            let literal = superbunched_steady_state(&params, *amplitude)?;
            references.push(("mixture_distance", vec![limit; times.len()]));
            references.push(("literal_mixture_distance", vec![literal; times.len()]));
        }
        _ => {}
    }

    let mut columns = vec!["t", "mean_n", "trace_distance_std_err"];
    columns.extend(references.iter().map(|(name, _)| *name));
    let mut final_distances = Vec::new();
    let mut rows = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let mut row = vec![num(t), num(mean_photons(&avg.states[k])), num(avg.trace_distance_std_err(k))];
        for (name, states) in &references {
            let d = trace_distance(&avg.states[k], &states[k])?;
            row.push(num(d));
            if k + 1 == times.len() {
                final_distances.push((*name, toml_num(d)));
            }
        }
        rows.push(row);
    }
    ctx.write_csv("trajectories.csv", &columns, &rows)?;
    let jumps: usize = records.iter().map(|r| r.jumps.len()).sum();
    let mut summary = vec![
        ("n_traj", n_traj.to_string()),
        ("total_jumps", jumps.to_string()),
        ("breach_fraction", toml_num(avg.breach_fraction)),
    ];
    summary.extend(final_distances.iter().cloned());
    ctx.write_sidecar(&summary)?;
    println!("{n_traj} trajectories, {jumps} jumps");
    for (name, d) in &final_distances {
        println!("{name} at t = {horizon}: {d}");
    }
    if let Some(w) = &avg.warning {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn correlations(ctx: &RunContext) -> Result<(), CliError> {
    if !ctx.config.is_exponential() {
        return Err(CliError::Config(
            "correlations are evaluated by quantum regression, which needs exponential (Poissonian) arrivals".into(),
        ));
    }
    let params = ctx.config.micromaser_params()?;
    let times = ctx.config.times()?;
    let strict = params.p == 1.0 && params.nbar == 0.0;
    let mode = if strict { DualityMode::Strict } else { DualityMode::Diagnostic };
    let r = duality_report(&params, &times, 10, mode)?;
    let rows: Vec<Vec<String>> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (a, b) = (r.g2.values[k], r.g1.values[k]);
            vec![num(t), num(a), num(b), num((a - b).abs())]
        })
        .collect();
    ctx.write_csv("correlations.csv", &["t", "g2", "g1", "abs_diff"], &rows)?;
    ctx.write_sidecar(&[
        ("duality_expected", strict.to_string()),
        ("max_correlation_deviation", toml_num(r.max_correlation_deviation)),
        ("max_joint_asymmetry", toml_num(r.max_joint_asymmetry)),
    ])?;
    println!(
        "max |g2 - g1| = {:.3e}, max joint asymmetry = {:.3e}{}",
        r.max_correlation_deviation,
        r.max_joint_asymmetry,
        if strict { "" } else { " (no equality expected at these parameters)" }
    );
    Ok(())
}

pub fn fluctuation(ctx: &RunContext) -> Result<(), CliError> {
    let params = ctx.config.micromaser_params()?;
    if !(params.p > 0.0 && params.p < 1.0 && params.nbar > 0.0) {
        return Err(CliError::Config(
            "the fluctuation audit needs finite temperatures (0 < p < 1 and nbar > 0); \
             at p = 1, nbar = 0 use the steady-state dual check instead"
                .into(),
        ));
    }
    let times = ctx.config.times()?;
    let horizon = *times.last().unwrap();
    if horizon <= 0.0 {
        return Err(CliError::Config("the audit horizon (last time point) must be positive".into()));
    }
    let n_traj = ctx.config.n_traj()?;
    let rho0 = initial_state(ctx, &params, true)?;
    let mode = arrival_mode(ctx)?;
    if let ArrivalMode::Renewal { convention, .. } = &mode {
        if *convention != ArrivalConvention::Stationary {
            return Err(CliError::Config(
                "the renewal fluctuation audit needs the stationary arrival convention".into(),
            ));
        }
    }
    let records = simulate_ensemble(&params, &mode, &rho0, n_traj, horizon, ctx.config.seed)?;
    let duals = crooks_dual_per_reservoir(&build_channels(&params)?, &params)?;
    let mut rows = Vec::with_capacity(records.len());
    let mut worst: f64 = 0.0;
    for (i, r) in records.iter().enumerate() {
        let c = match &mode {
            ArrivalMode::Poisson => fluctuation_check(r, &params, &duals)?,
            ArrivalMode::Renewal { process, convention } => {
                fluctuation_check_renewal(r, &params, process, *convention, &duals)?
            }
        };
        let dev = c.deviation();
        worst = worst.max(if dev.is_nan() { f64::INFINITY } else { dev });
        rows.push(vec![
            i.to_string(),
            r.initial_level.to_string(),
            r.final_level.to_string(),
            r.jumps.len().to_string(),
            r.atom_quanta.to_string(),
            r.bath_quanta.to_string(),
            num(c.log_ratio_measured),
            num(c.log_ratio_predicted),
            num(dev),
        ]);
    }
    ctx.write_csv(
        "fluctuation.csv",
        &[
            "record",
            "initial",
            "final",
            "jumps",
            "atom_quanta",
            "bath_quanta",
            "log_ratio_measured",
            "log_ratio_predicted",
            "deviation",
        ],
        &rows,
    )?;
    ctx.write_sidecar(&[
        ("n_records", records.len().to_string()),
        ("max_deviation", toml_num(worst)),
        ("tolerance", toml_num(AUDIT_TOL)),
    ])?;
    println!("{} records, max deviation {worst:.3e}", records.len());
    if worst > AUDIT_TOL {
        return Err(CliError::Numeric(format!(
            "fluctuation identity violated: max deviation {worst:.3e} exceeds {AUDIT_TOL:e}"
        )));
    }
    Ok(())
}

pub fn renewal(ctx: &RunContext) -> Result<(), CliError> {
    let grid_cfg = ctx
        .config
        .renewal
        .as_ref()
        .ok_or_else(|| CliError::Config("missing table `[renewal]` (t_max, step)".into()))?;
    let wtd = ctx.config.waiting_times()?;
    let grid = UniformGrid::new(grid_cfg.t_max, grid_cfg.step)?;
    let g = renewal_density(&wtd, grid)?;
    let process = micromaser::RenewalProcess::new(wtd);
    let times = grid.times();
    let rs = residual_and_survival(&process, &times)?;
    let rows: Vec<Vec<String>> = (0..times.len())
        .map(|k| vec![num(times[k]), num(g.g[k]), num(rs.p0[k]), num(rs.p1[k]), num(rs.pf[k])])
        .collect();
    ctx.write_csv("renewal-density.csv", &["t", "g", "p0", "p1", "pf"], &rows)?;
    let g0 = g.g[0];
    ctx.write_sidecar(&[("g_at_zero", toml_num(g0)), ("points", times.len().to_string())])?;
    println!("renewal density on {} points, g(0) = {g0:.6}", times.len());
    Ok(())
}
