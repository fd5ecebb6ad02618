//! Run configuration: a TOML file, validated on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use micromaser::collision::hyperexp_from_superbunched;
use micromaser::{ArrivalConvention, MicromaserParams, RenewalProcess, TruncationConfig, WaitingTimeDistribution};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub n_traj: Option<usize>,
    /// Fock level the evolution starts from. Unset: vacuum for `evolve` and
    /// `trajectories`, steady-state populations for `fluctuation`.
    pub initial_level: Option<usize>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub params: ParamsConfig,
    #[serde(default)]
    pub arrivals: ArrivalsConfig,
    pub time: Option<TimeConfig>,
    pub renewal: Option<RenewalGridConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "one")]
    pub omega: f64,
    pub gamma: f64,
    pub nbar: f64,
    pub rate: f64,
    pub p: f64,
    pub theta: f64,
    pub n_max: usize,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

fn one() -> f64 {
    1.0
}

fn default_tail_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArrivalsConfig {
    Exponential {
        #[serde(default)]
        convention: Convention,
    },
    Hyperexponential {
        weights: Vec<f64>,
        rates: Vec<f64>,
        #[serde(default)]
        convention: Convention,
    },
    /// Pair correlation `A exp(-decay t) + 1` at the beam rate `params.rate`.
    Superbunched {
        amplitude: f64,
        decay: f64,
        #[serde(default)]
        convention: Convention,
    },
    Tabulated {
        tau: Vec<f64>,
        w: Vec<f64>,
        #[serde(default)]
        convention: Convention,
    },
}

impl Default for ArrivalsConfig {
    fn default() -> Self {
        ArrivalsConfig::Exponential {
            convention: Convention::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    #[default]
    Stationary,
    FirstJump,
}

impl From<Convention> for ArrivalConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Stationary => ArrivalConvention::Stationary,
            Convention::FirstJump => ArrivalConvention::FirstJumpW,
        }
    }
}

/// Either explicit `values`, or `points` equally spaced samples on `[0, t_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub values: Option<Vec<f64>>,
    pub t_max: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalGridConfig {
    pub t_max: f64,
    pub step: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.micromaser_params()?;
        cfg.arrival_process()?;
        Ok(cfg)
    }

    /// Everything that shapes the output, serialized canonically. Worker
    /// count and output directory are left out.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn micromaser_params(&self) -> Result<MicromaserParams, CliError> {
        let p = &self.params;
        let trunc = TruncationConfig::new(p.n_max, p.tail_tol)?;
        Ok(MicromaserParams::new(p.omega, p.gamma, p.nbar, p.rate, p.p, p.theta, trunc)?)
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self.arrivals, ArrivalsConfig::Exponential { .. })
    }

    pub fn convention(&self) -> ArrivalConvention {
        match &self.arrivals {
            ArrivalsConfig::Exponential { convention }
            | ArrivalsConfig::Hyperexponential { convention, .. }
            | ArrivalsConfig::Superbunched { convention, .. }
            | ArrivalsConfig::Tabulated { convention, .. } => (*convention).into(),
        }
    }

    /// The waiting-time distribution. Its mean rate must agree with
    /// `params.rate`, which sets the collision term of the generators.
    pub fn waiting_times(&self) -> Result<WaitingTimeDistribution, CliError> {
        let rate = self.params.rate;
        let wtd = match &self.arrivals {
            ArrivalsConfig::Exponential { .. } => WaitingTimeDistribution::exponential(rate)?,
            ArrivalsConfig::Hyperexponential { weights, rates, .. } => {
                WaitingTimeDistribution::hyperexponential(weights.clone(), rates.clone())?
            }
            ArrivalsConfig::Superbunched { amplitude, decay, .. } => hyperexp_from_superbunched(*amplitude, *decay, rate)?,
            ArrivalsConfig::Tabulated { tau, w, .. } => WaitingTimeDistribution::tabulated(tau.clone(), w.clone())?,
        };
        if (wtd.rate() - rate).abs() > 1e-6 * rate.max(1e-300) {
            return Err(CliError::Config(format!(
                "arrivals have mean rate {} but params.rate = {rate}",
                wtd.rate()
            )));
        }
        Ok(wtd)
    }

    pub fn arrival_process(&self) -> Result<Option<RenewalProcess>, CliError> {
        if self.params.rate == 0.0 {
            if !self.is_exponential() {
                return Err(CliError::Config("non-exponential arrivals need params.rate > 0".into()));
            }
            return Ok(None);
        }
        Ok(Some(RenewalProcess::new(self.waiting_times()?)))
    }

    pub fn n_traj(&self) -> Result<usize, CliError> {
        match self.n_traj {
            Some(n) if n > 0 => Ok(n),
            Some(_) => Err(CliError::Config("n_traj must be positive".into())),
            None => Err(CliError::Config("missing key `n_traj`".into())),
        }
    }

    pub fn times(&self) -> Result<Vec<f64>, CliError> {
        let t = self.time.as_ref().ok_or_else(|| CliError::Config("missing table `[time]`".into()))?;
        let grid = match (&t.values, t.t_max, t.points) {
            (Some(v), None, None) => v.clone(),
            (None, Some(t_max), Some(points)) => {
                if !(t_max > 0.0 && t_max.is_finite()) || points < 2 {
                    return Err(CliError::Config("[time] needs t_max > 0 and points >= 2".into()));
                }
                (0..points).map(|k| t_max * k as f64 / (points - 1) as f64).collect()
            }
            _ => {
                return Err(CliError::Config(
                    "[time] takes either `values` or both `t_max` and `points`".into(),
                ))
            }
        };
        if grid.is_empty() {
            return Err(CliError::Config("time grid is empty".into()));
        }
        if grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config("time grid must be finite, >= 0 and strictly increasing".into()));
        }
        Ok(grid)
    }
}
