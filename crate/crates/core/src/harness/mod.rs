//! Multi-seed experiment runner with per-checkpoint aggregation.

pub mod figures;
pub mod output;

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envfile::{self, EnvFileError};
use crate::envs::{BenchmarkKind, BenchmarkSpec, EnvError};
use crate::learners::{Algorithm, Learner, LearnerError, LearnerState, StepSchedule};
use crate::mdp::{PolicyPair, run_rng, sample_index, validate, Environment, FeatureMap, MdpError, TrajectoryStream};
use crate::oracle::{build_stationary_model, true_values, OracleError, StationaryModel};

/// A run is declared diverged once its metric exceeds this magnitude or stops being finite.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Upper bound on the number of checkpoints recorded per run (plus the initial one).
pub const MAX_CHECKPOINTS: u64 = 1000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("environment violates its invariants: {0}")]
    InvalidEnvironment(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    EnvFile(#[from] EnvFileError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Rmse,
    /// `θ` itself when `d = 1`, otherwise `‖θ‖₂`.
    Theta,
    Mspbe,
}

/// State weighting used by the RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StateWeighting {
    #[default]
    Uniform,
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvSource {
    Baird7 { q: f64 },
    Theta2theta { p: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(flatten)]
    pub source: EnvSource,
    /// Overrides the benchmark default (or the file's discount).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_w: Option<Vec<f64>>,
    /// Replace the target policy by the behavior policy.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub on_policy: bool,
}

impl EnvConfig {
    pub fn baird7(q: f64) -> Self {
        Self { source: EnvSource::Baird7 { q }, gamma: None, initial_theta: None, initial_w: None, on_policy: false }
    }

    pub fn theta_2theta(p: f64) -> Self {
        Self { source: EnvSource::Theta2theta { p }, gamma: None, initial_theta: None, initial_w: None, on_policy: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    /// `a(n)`, or `α(n)` for single-timescale learners.
    pub a: StepSchedule,
    /// `b(n)` for two-timescale learners.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<StepSchedule>,
    pub num_runs: usize,
    pub num_steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub weighting: StateWeighting,
    /// Defaults to `max(1, num_steps / 1000)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    /// Worker threads; `None` uses the global rayon pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(env: EnvConfig, algorithm: Algorithm, a: StepSchedule, b: Option<StepSchedule>) -> Self {
        Self {
            env,
            algorithm,
            a,
            b,
            num_runs: 1000,
            num_steps: 10_000,
            seed: 0,
            metric: Metric::Rmse,
            weighting: StateWeighting::Uniform,
            checkpoint_every: None,
            threads: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Parse { path: "<config>".into(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::Parse { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn checkpoint_interval(&self) -> u64 {
        self.checkpoint_every.unwrap_or_else(|| (self.num_steps / MAX_CHECKPOINTS).max(1)).max(1)
    }

    /// Steps at which the metric is recorded: `0, k, 2k, …` and always `num_steps`.
    pub fn checkpoints(&self) -> Vec<u64> {
        let k = self.checkpoint_interval();
        let mut steps: Vec<u64> = (0..=self.num_steps).step_by(k as usize).collect();
        if steps.last() != Some(&self.num_steps) {
            steps.push(self.num_steps);
        }
        steps
    }
}

/// Environment and everything derived from it that the runs share.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub env: Environment,
    pub true_values: Vec<f64>,
    pub model: StationaryModel,
    pub initial: LearnerState,
}

pub fn prepare(config: &EnvConfig) -> Result<Prepared, HarnessError> {
    let (env, theta0, w0) = match &config.source {
        EnvSource::Baird7 { q } | EnvSource::Theta2theta { p: q } => {
            let mut spec = match config.source {
                EnvSource::Baird7 { .. } => BenchmarkSpec::baird7(*q),
                _ => BenchmarkSpec::theta_2theta(*q),
            };
            if let Some(g) = config.gamma {
                spec = spec.with_gamma(g);
            }
            if let Some(t) = &config.initial_theta {
                spec.initial_theta = t.clone();
            }
            if let Some(w) = &config.initial_w {
                spec.initial_w = w.clone();
            }
            let bench = spec.build()?;
            (bench.env, spec.initial_theta, spec.initial_w)
        }
        EnvSource::File { path } => {
            let mut env = envfile::read(path)?;
            if let Some(g) = config.gamma {
                env.mdp = env.mdp.with_discount(g);
            }
            let d = env.dim();
            let theta = config.initial_theta.clone().unwrap_or_else(|| vec![0.0; d]);
            let w = config.initial_w.clone().unwrap_or_else(|| vec![0.0; d]);
            (env, theta, w)
        }
    };
    let mut env = env;
    if config.on_policy {
        env.policies = PolicyPair::on_policy(env.policies.behavior.clone());
    }
    let report = validate(&env.mdp, &env.policies)?;
    if !report.is_valid() {
        let list: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(HarnessError::InvalidEnvironment(list.join("; ")));
    }
    let d = env.dim();
    if theta0.len() != d || w0.len() != d {
        return Err(HarnessError::Config(format!("initial vectors must have length {d}")));
    }
    let model = build_stationary_model(&env)?;
    let true_values = true_values(&env, &env.policies.target)?.as_slice().to_vec();
    let initial = LearnerState::new(theta0, w0)?;
    Ok(Prepared { env, true_values, model, initial })
}

impl EnvSource {
    pub fn kind(&self) -> Option<BenchmarkKind> {
        match *self {
            EnvSource::Baird7 { q } => Some(BenchmarkKind::Baird7 { q }),
            EnvSource::Theta2theta { p } => Some(BenchmarkKind::Theta2theta { p }),
            EnvSource::File { .. } => None,
        }
    }
}

/// `sqrt(Σ_s w_s (θᵀφ(s) − V*(s))²)` with weights summing to one.
pub fn rmse(features: &FeatureMap, theta: &[f64], true_values: &[f64], weights: Option<&[f64]>) -> f64 {
    let n = features.num_states();
    let mut acc = 0.0;
    for (s, v) in true_values.iter().enumerate().take(n) {
        let err = features.value(theta, s) - v;
        let w = weights.map_or(1.0 / n as f64, |w| w[s]);
        acc += w * err * err;
    }
    acc.sqrt()
}

fn evaluate(metric: Metric, prepared: &Prepared, weights: Option<&[f64]>, theta: &[f64]) -> f64 {
    match metric {
        Metric::Rmse => rmse(&prepared.env.features, theta, &prepared.true_values, weights),
        Metric::Theta if theta.len() == 1 => theta[0],
        Metric::Theta => theta.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Metric::Mspbe => prepared.model.mspbe(&DVector::from_column_slice(theta)),
    }
}

fn is_diverged(value: f64) -> bool {
    !value.is_finite() || value.abs() > DIVERGENCE_THRESHOLD
}

/// One seeded run: the metric at every checkpoint (`NaN` from the divergence point on).
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub metric: Vec<f64>,
    pub diverged_at: Option<u64>,
    pub final_state: LearnerState,
}

pub fn simulate_run(
    config: &ExperimentConfig,
    prepared: &Prepared,
    checkpoints: &[u64],
    run: u64,
) -> Result<RunTrace, HarnessError> {
    let env = &prepared.env;
    let weights = match config.weighting {
        StateWeighting::Uniform => None,
        StateWeighting::Stationary => Some(prepared.model.nu.as_slice()),
    };
    let mut rng = run_rng(config.seed, run);
    let start = sample_index(prepared.model.nu.as_slice(), &mut rng);
    let mut stream = TrajectoryStream::with_rng(env, rng, start)?;
    let mut learner = Learner::new(config.algorithm, config.a, config.b, env, prepared.initial.clone())?;
    let mut metric = Vec::with_capacity(checkpoints.len());
    let mut diverged_at = None;
    let mut done = 0u64;
    for &checkpoint in checkpoints {
        if diverged_at.is_none() {
            while done < checkpoint {
                let sample = stream.next_sample();
                learner.observe(&sample, &env.features);
                done += 1;
            }
            let value = evaluate(config.metric, prepared, weights, &learner.state.theta);
            if is_diverged(value) || !learner.state.is_finite() {
                diverged_at = Some(checkpoint);
            } else {
                metric.push(value);
                continue;
            }
        }
        metric.push(f64::NAN);
    }
    Ok(RunTrace { metric, diverged_at, final_state: learner.state })
}

/// Per-checkpoint mean and population variance of the metric across surviving runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Runs diverged at or before each checkpoint.
    pub diverged: Vec<usize>,
    pub diverged_runs: usize,
}

impl AggregateSeries {
    pub fn from_traces(steps: Vec<u64>, traces: &[RunTrace]) -> Self {
        let mut mean = Vec::with_capacity(steps.len());
        let mut variance = Vec::with_capacity(steps.len());
        let mut diverged = Vec::with_capacity(steps.len());
        for k in 0..steps.len() {
            let alive: Vec<f64> = traces.iter().map(|t| t.metric[k]).filter(|v| !v.is_nan()).collect();
            diverged.push(traces.len() - alive.len());
            if alive.is_empty() {
                mean.push(f64::NAN);
                variance.push(f64::NAN);
                continue;
            }
            // shifted by the first value so identical runs give exactly zero variance
            let n = alive.len() as f64;
            let shift = alive[0];
            let m = alive.iter().map(|x| x - shift).sum::<f64>() / n;
            let v = alive.iter().map(|x| (x - shift - m) * (x - shift - m)).sum::<f64>() / n;
            mean.push(shift + m);
            variance.push(v);
        }
        let diverged_runs = traces.iter().filter(|t| t.diverged_at.is_some()).count();
        Self { steps, mean, variance, diverged, diverged_runs }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_variance(&self) -> f64 {
        self.variance.last().copied().unwrap_or(f64::NAN)
    }
}

/// All runs of an experiment, in run-index order.
pub fn run_traces(config: &ExperimentConfig) -> Result<(Vec<u64>, Vec<RunTrace>), HarnessError> {
    if config.num_runs == 0 {
        return Err(HarnessError::Config("num_runs must be at least 1".into()));
    }
    if config.algorithm.two_timescale() && config.b.is_none() {
        return Err(HarnessError::Config(format!("{} needs a b schedule", config.algorithm.label())));
    }
    let prepared = prepare(&config.env)?;
    // surface learner construction errors before spawning runs
    Learner::new(config.algorithm, config.a, config.b, &prepared.env, prepared.initial.clone())?;
    let checkpoints = config.checkpoints();
    let work = || {
        (0..config.num_runs as u64)
            .into_par_iter()
            .map(|run| simulate_run(config, &prepared, &checkpoints, run))
            .collect::<Result<Vec<_>, _>>()
    };
    let traces = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok((checkpoints, traces))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateSeries, HarnessError> {
    let (steps, traces) = run_traces(config)?;
    Ok(AggregateSeries::from_traces(steps, &traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{baird7, theta_2theta, BAIRD_INITIAL_THETA};

    #[test]
    fn rmse_hand_values() {
        let b = baird7(1.0 / 7.0, 0.99).unwrap();
        let r = rmse(&b.env.features, &BAIRD_INITIAL_THETA, &b.true_values, None);
        assert!((r - (198.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&b.env.features, &[0.0; 8], &b.true_values, None), 0.0);

        let t = theta_2theta(0.5, 0.9).unwrap();
        let r = rmse(&t.env.features, &[1.0], &t.true_values, None);
        assert!((r - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_gives_initial_metric() {
        let mut cfg = ExperimentConfig::new(
            EnvConfig::baird7(1.0 / 7.0),
            Algorithm::Ontdc,
            StepSchedule::Constant { c: 0.005 },
            Some(StepSchedule::Constant { c: 0.05 }),
        );
        cfg.num_runs = 1;
        cfg.num_steps = 0;
        let series = run_experiment(&cfg).unwrap();
        assert_eq!(series.steps, vec![0]);
        assert!((series.mean[0] - (198.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(series.variance, vec![0.0]);
    }

    #[test]
    fn checkpoint_layout() {
        let mut cfg = ExperimentConfig::new(EnvConfig::theta_2theta(0.5), Algorithm::Ontdc, StepSchedule::Constant { c: 0.1 }, None);
        cfg.num_steps = 2500;
        assert_eq!(cfg.checkpoint_interval(), 2);
        let c = cfg.checkpoints();
        assert_eq!(c.len(), 1251);
        cfg.num_steps = 10;
        cfg.checkpoint_every = Some(3);
        assert_eq!(cfg.checkpoints(), vec![0, 3, 6, 9, 10]);
    }

    #[test]
    fn invalid_configs_fail_early() {
        let mut cfg = ExperimentConfig::new(EnvConfig::theta_2theta(0.5), Algorithm::Ontdc, StepSchedule::Constant { c: 0.1 }, None);
        assert!(matches!(run_experiment(&cfg), Err(HarnessError::Config(_))));
        cfg.b = Some(StepSchedule::Constant { c: 0.1 });
        cfg.num_runs = 0;
        assert!(matches!(run_experiment(&cfg), Err(HarnessError::Config(_))));
        cfg.num_runs = 1;
        cfg.env.initial_theta = Some(vec![1.0, 2.0]);
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let mut cfg = ExperimentConfig::new(
            EnvConfig::baird7(0.01),
            Algorithm::TdcLambda { lambda: 0.1 },
            StepSchedule::Polynomial { c: 0.5, t0: 0.0, kappa: 1.0 },
            Some(StepSchedule::Constant { c: 0.05 }),
        );
        cfg.env.gamma = Some(0.95);
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }
}
