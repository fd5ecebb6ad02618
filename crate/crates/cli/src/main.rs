mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use output::RunContext;

const AFTER_HELP: &str = "\
CONFIGURATION
    A run is described by one TOML file. Unknown keys are rejected.

        seed = 7                 # master seed, default 0
        n_traj = 10000           # trajectories, fluctuation
        initial_level = 0        # optional starting Fock level
        workers = 4              # optional
        out = \"results\"          # optional output directory

        [params]
        omega = 1.0              # optional, default 1
        gamma = 1.0              # cavity decay rate
        nbar = 0.5               # thermal photon number of the cavity bath
        rate = 1.0               # mean atomic arrival rate R
        p = 0.3                  # probability an atom arrives excited
        theta = 1.0              # vacuum Rabi angle
        n_max = 40               # highest retained Fock level
        tail_tol = 1e-6          # optional, default 1e-6

        [arrivals]               # optional, default exponential
        type = \"superbunched\"    # exponential | hyperexponential |
                                 # superbunched | tabulated
        amplitude = 4.0          # superbunched: g(t) = A exp(-decay t) + 1
        decay = 0.005
        convention = \"stationary\" # or \"first-jump\"
        # hyperexponential: weights = [...], rates = [...]
        # tabulated: tau = [...], w = [...]

        [time]                   # values = [...], or t_max and points
        t_max = 5.0
        points = 11

        [renewal]                # renewal-density grid
        t_max = 10.0
        step = 0.001

    Command-line flags override the file.

OUTPUT
    Each command writes <command>.csv and <command>.meta.toml into the
    output directory; trajectories also writes trajectories.dump. Headers
    carry the library version, a SHA-256 hash of the configuration and the
    seed. Output does not depend on the number of workers.

ENVIRONMENT
    MICROMASER_WORKERS
        Worker threads when neither --workers nor the config sets them.

EXIT STATUS
    0   success
    2   usage, configuration or precondition error
    3   numerical validity error (truncation tail, failed audit, singular
        system)";

#[derive(Parser)]
#[command(
    name = "micromaser",
    version,
    about = "Micromaser simulation and verification",
    long_about = "Simulates a single cavity mode pumped by a beam of two-level atoms: \
steady states, master-equation evolution, quantum-jump trajectories, field and \
beam correlations, trajectory fluctuation audits and renewal densities of the \
atomic arrival process.",
    after_long_help = AFTER_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for trajectory batches.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Photon-number distribution by closed form and by null-space solve.
    SteadyState,
    /// Markovian master-equation evolution on the [time] grid.
    Evolve,
    /// Quantum-jump ensemble, trajectory dump and ensemble averages.
    Trajectories,
    /// Field and beam intensity correlations and their duality.
    Correlations,
    /// Per-record audit of the detailed fluctuation identity.
    Fluctuation,
    /// Renewal density, residual density and survival of the arrivals.
    RenewalDensity,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SteadyState => "steady-state",
            Command::Evolve => "evolve",
            Command::Trajectories => "trajectories",
            Command::Correlations => "correlations",
            Command::Fluctuation => "fluctuation",
            Command::RenewalDensity => "renewal-density",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<micromaser::Error> for CliError {
    fn from(e: micromaser::Error) -> Self {
        use micromaser::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParameter(_)
            | E::DimensionMismatch { .. }
            | E::Grid(_)
            | E::CoarseStep { .. }
            | E::InfiniteBeta(_)
            | E::Precondition(_)
            | E::Parse { .. } => CliError::Config(msg),
            E::Io(_) => CliError::Io(msg),
            _ => CliError::Numeric(msg),
        }
    }
}

fn worker_count(flag: Option<usize>, config: Option<usize>) -> Result<Option<usize>, CliError> {
    let env = match std::env::var("MICROMASER_WORKERS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("MICROMASER_WORKERS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    match flag.or(config).or(env) {
        Some(0) => Err(CliError::Config("worker count must be positive".into())),
        n => Ok(n),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut config = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = worker_count(cli.workers, config.workers)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?;
    }
    let out_dir = cli.out.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let ctx = RunContext::new(cli.command.name(), config, out_dir)?;
    match cli.command {
        Command::SteadyState => commands::steady_state(&ctx),
        Command::Evolve => commands::evolve(&ctx),
        Command::Trajectories => commands::trajectories(&ctx),
        Command::Correlations => commands::correlations(&ctx),
        Command::Fluctuation => commands::fluctuation(&ctx),
        Command::RenewalDensity => commands::renewal(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
