//! Per-sample updates for TD(0), TDC with importance weighting (ONTDC),
//! sub-sampled TDC (OFFTDC) and TDC(λ), plus step-size schedules.
//!
//! All updates read only the pre-update `(θ_n, w_n)`: scalar summaries are
//! computed first, then both iterates are written.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{dot, Environment, FeatureMap, TransitionSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid step schedule: {0}")]
    Schedule(String),
    #[error("trace parameter lambda = {0} is outside [0, 1]")]
    Lambda(f64),
    #[error("sub-sampled TDC needs a deterministic target policy")]
    NondeterministicTarget,
    #[error("{0} needs a second step schedule")]
    MissingSchedule(&'static str),
    #[error("initial vector has length {got}, feature dimension is {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
}

/// Iterates of a TD-family learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub trace: Vec<f64>,
    pub step: u64,
}

impl LearnerState {
    pub fn new(theta: Vec<f64>, w: Vec<f64>) -> Result<Self, LearnerError> {
        if theta.len() != w.len() {
            return Err(LearnerError::Dimension { expected: theta.len(), got: w.len() });
        }
        let trace = vec![0.0; theta.len()];
        Ok(Self { theta, w, trace, step: 0 })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { theta: vec![0.0; dim], w: vec![0.0; dim], trace: vec![0.0; dim], step: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.w).chain(&self.trace).all(|x| x.is_finite())
    }
}

/// Step-size sequence. Polynomial schedules are `c/(n + t0)^κ` with a 1-based update index `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { c: f64 },
    Polynomial { c: f64, t0: f64, kappa: f64 },
}

impl StepSchedule {
    pub fn constant(c: f64) -> Result<Self, LearnerError> {
        Self::Constant { c }.validated()
    }

    pub fn polynomial(c: f64, t0: f64, kappa: f64) -> Result<Self, LearnerError> {
        Self::Polynomial { c, t0, kappa }.validated()
    }

    pub fn validated(self) -> Result<Self, LearnerError> {
        match self {
            StepSchedule::Constant { c } if !(c > 0.0 && c.is_finite()) => {
                Err(LearnerError::Schedule(format!("constant step {c} must be positive")))
            }
            StepSchedule::Polynomial { c, .. } if !(c > 0.0 && c.is_finite()) => {
                Err(LearnerError::Schedule(format!("scale {c} must be positive")))
            }
            StepSchedule::Polynomial { t0, .. } if !(t0 >= 0.0 && t0.is_finite()) => {
                Err(LearnerError::Schedule(format!("offset {t0} must be nonnegative")))
            }
            StepSchedule::Polynomial { kappa, .. } if !(kappa > 0.5 && kappa <= 1.0) => {
                Err(LearnerError::Schedule(format!("exponent {kappa} must lie in (0.5, 1]")))
            }
            ok => Ok(ok),
        }
    }

    /// Step size for the `n`-th update, `n ≥ 1`; `n = 0` is treated as `n = 1`.
    pub fn value(&self, n: u64) -> f64 {
        match *self {
            StepSchedule::Constant { c } => c,
            StepSchedule::Polynomial { c, t0, kappa } => {
                let base = (n.max(1) as f64 + t0).max(1.0);
                if kappa == 1.0 {
                    c / base
                } else {
                    c / base.powf(kappa)
                }
            }
        }
    }

    /// Step used by a learner whose counter reads `step` (updates are numbered from 1).
    pub fn at_step(&self, step: u64) -> f64 {
        self.value(step + 1)
    }

    fn decay_exponent(&self) -> Option<f64> {
        match *self {
            StepSchedule::Constant { .. } => None,
            StepSchedule::Polynomial { kappa, .. } => Some(kappa),
        }
    }
}

/// Whether a slow/fast schedule pair has `Σa = Σb = ∞`, `Σ(a² + b²) < ∞` and `a(n)/b(n) → 0`.
pub fn satisfies_two_timescale(slow: &StepSchedule, fast: &StepSchedule) -> bool {
    match (slow.decay_exponent(), fast.decay_exponent()) {
        (Some(ks), Some(kf)) => ks > kf,
        _ => false,
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Constant { c } => write!(f, "const:{c}"),
            StepSchedule::Polynomial { c, t0, kappa } => write!(f, "poly:{c},{t0},{kappa}"),
        }
    }
}

impl FromStr for StepSchedule {
    type Err = LearnerError;

    /// Parses `const:C` or `poly:C,T0,KAPPA`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LearnerError::Schedule(format!("cannot parse {s:?}; expected const:C or poly:C,T0,KAPPA"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        match (kind.trim(), nums.as_slice()) {
            ("const", [c]) => Self::constant(*c),
            ("poly", [c, t0, kappa]) => Self::polynomial(*c, *t0, *kappa),
            _ => Err(bad()),
        }
    }
}

/// `δ = r + γθᵀφ(s') − θᵀφ(s)`.
pub fn td_error(features: &FeatureMap, gamma: f64, theta: &[f64], sample: &TransitionSample) -> f64 {
    sample.reward + gamma * features.value(theta, sample.next_state) - features.value(theta, sample.state)
}

/// Shared TDC kernel: with eligibility vector `e`,
/// `θ += a(δe − c(eᵀw)φ')` and `w += b(δe − (φᵀw)φ)`.
#[allow(clippy::too_many_arguments)]
fn tdc_update(
    theta: &mut [f64],
    w: &mut [f64],
    e: impl Fn(usize) -> f64,
    phi: &[f64],
    phi_next: &[f64],
    delta: f64,
    correction: f64,
    a_n: f64,
    b_n: f64,
) {
    let e_dot_w: f64 = w.iter().enumerate().map(|(i, x)| e(i) * x).sum();
    let phi_dot_w = dot(phi, w);
    for i in 0..theta.len() {
        let ei = e(i);
        theta[i] += a_n * (delta * ei - correction * e_dot_w * phi_next[i]);
        w[i] += b_n * (delta * ei - phi_dot_w * phi[i]);
    }
}

/// TDC with importance weighting:
/// `θ += aρ[δφ − γφ'(φᵀw)]`, `w += b(ρδ − φᵀw)φ`.
#[allow(clippy::too_many_arguments)]
pub fn ontdc_step(
    state: &mut LearnerState,
    sample: &TransitionSample,
    rho: f64,
    a_n: f64,
    b_n: f64,
    features: &FeatureMap,
    gamma: f64,
) {
    let delta = td_error(features, gamma, &state.theta, sample);
    let phi = features.phi(sample.state);
    let e = |i: usize| rho * phi[i];
    tdc_update(&mut state.theta, &mut state.w, e, phi, features.phi(sample.next_state), delta, gamma, a_n, b_n);
    state.step += 1;
}

/// Sub-sampled TDC: the unweighted TDC update when the behavior action matched the
/// deterministic target action, otherwise only the counter advances.
pub fn offtdc_step(
    state: &mut LearnerState,
    sample: &TransitionSample,
    matched: bool,
    a_n: f64,
    b_n: f64,
    features: &FeatureMap,
    gamma: f64,
) {
    if matched {
        let delta = td_error(features, gamma, &state.theta, sample);
        let phi = features.phi(sample.state);
        let e = |i: usize| phi[i];
        tdc_update(&mut state.theta, &mut state.w, e, phi, features.phi(sample.next_state), delta, gamma, a_n, b_n);
    }
    state.step += 1;
}

/// How TD(0) treats off-policy samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// Ignore `ρ`; plain on-trajectory TD(0).
    None,
    #[default]
    Importance,
}

/// `θ += α(ρ)δφ`.
pub fn td0_step(
    state: &mut LearnerState,
    sample: &TransitionSample,
    rho: f64,
    mode: RhoMode,
    alpha: f64,
    features: &FeatureMap,
    gamma: f64,
) {
    let delta = td_error(features, gamma, &state.theta, sample);
    let scale = match mode {
        RhoMode::None => alpha * delta,
        RhoMode::Importance => alpha * rho * delta,
    };
    for (t, x) in state.theta.iter_mut().zip(features.phi(sample.state)) {
        *t += scale * x;
    }
    state.step += 1;
}

/// GTD(λ)/TDC(λ):
/// `e ← ρ(φ + γλe)`, `θ += a(δe − γ(1−λ)(eᵀw)φ')`, `w += b(δe − (φᵀw)φ)`.
///
/// With `λ = 0` this is exactly [`ontdc_step`].
#[allow(clippy::too_many_arguments)]
pub fn tdc_lambda_step(
    state: &mut LearnerState,
    sample: &TransitionSample,
    rho: f64,
    lambda: f64,
    a_n: f64,
    b_n: f64,
    features: &FeatureMap,
    gamma: f64,
) -> Result<(), LearnerError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LearnerError::Lambda(lambda));
    }
    let delta = td_error(features, gamma, &state.theta, sample);
    let phi = features.phi(sample.state);
    let decay = gamma * lambda;
    for (e, x) in state.trace.iter_mut().zip(phi) {
        *e = rho * (x + decay * *e);
    }
    let trace = &state.trace;
    let correction = gamma * (1.0 - lambda);
    let next = features.phi(sample.next_state);
    tdc_update(&mut state.theta, &mut state.w, |i| trace[i], phi, next, delta, correction, a_n, b_n);
    state.step += 1;
    Ok(())
}

/// Off-policy TD(λ) baseline with the same importance-weighted trace as TDC(λ): `θ += αδe`.
pub fn td_lambda_step(
    state: &mut LearnerState,
    sample: &TransitionSample,
    rho: f64,
    lambda: f64,
    alpha: f64,
    features: &FeatureMap,
    gamma: f64,
) -> Result<(), LearnerError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LearnerError::Lambda(lambda));
    }
    let delta = td_error(features, gamma, &state.theta, sample);
    let decay = gamma * lambda;
    for ((e, x), t) in state.trace.iter_mut().zip(features.phi(sample.state)).zip(state.theta.iter_mut()) {
        *e = rho * (x + decay * *e);
        *t += alpha * delta * *e;
    }
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Algorithm {
    Td0 {
        #[serde(default)]
        rho_mode: RhoMode,
    },
    Ontdc,
    Offtdc,
    TdcLambda { lambda: f64 },
    TdLambda { lambda: f64 },
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Td0 { .. } => "td0",
            Algorithm::Ontdc => "ontdc",
            Algorithm::Offtdc => "offtdc",
            Algorithm::TdcLambda { .. } => "tdclambda",
            Algorithm::TdLambda { .. } => "tdlambda",
        }
    }

    pub fn two_timescale(&self) -> bool {
        matches!(self, Algorithm::Ontdc | Algorithm::Offtdc | Algorithm::TdcLambda { .. })
    }
}

/// A learner bound to one environment: algorithm, schedules and iterates.
#[derive(Debug, Clone)]
pub struct Learner {
    algorithm: Algorithm,
    slow: StepSchedule,
    fast: Option<StepSchedule>,
    gamma: f64,
    ratios: Vec<f64>,
    num_actions: usize,
    target_actions: Option<Vec<usize>>,
    pub state: LearnerState,
}

impl Learner {
    /// `slow` is `a(n)` (or `α(n)` for single-timescale methods), `fast` is `b(n)`.
    pub fn new(
        algorithm: Algorithm,
        slow: StepSchedule,
        fast: Option<StepSchedule>,
        env: &Environment,
        state: LearnerState,
    ) -> Result<Self, LearnerError> {
        let d = env.dim();
        if state.theta.len() != d {
            return Err(LearnerError::Dimension { expected: d, got: state.theta.len() });
        }
        if state.w.len() != d || state.trace.len() != d {
            return Err(LearnerError::Dimension { expected: d, got: state.w.len() });
        }
        slow.validated()?;
        if let Some(f) = fast {
            f.validated()?;
        }
        if algorithm.two_timescale() && fast.is_none() {
            return Err(LearnerError::MissingSchedule(algorithm.label()));
        }
        let ratios = env.policies.ratio_table()?;
        let target_actions = match algorithm {
            Algorithm::Offtdc => {
                Some(env.policies.target.deterministic_actions().ok_or(LearnerError::NondeterministicTarget)?)
            }
            _ => None,
        };
        if let Algorithm::TdcLambda { lambda } | Algorithm::TdLambda { lambda } = algorithm {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(LearnerError::Lambda(lambda));
            }
            let bound = 1.0 / (ratios.iter().copied().fold(0.0, f64::max) * env.gamma());
            if lambda >= bound {
                log::warn!("lambda = {lambda} is at or above 1/(L gamma) = {bound}; convergence is not covered");
            }
        }
        Ok(Self {
            algorithm,
            slow,
            fast,
            gamma: env.gamma(),
            ratios,
            num_actions: env.mdp.num_actions(),
            target_actions,
            state,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    /// Consumes one behavior transition.
    pub fn observe(&mut self, sample: &TransitionSample, features: &FeatureMap) {
        let n = self.state.step;
        let rho = self.ratios[sample.state * self.num_actions + sample.action];
        let a_n = self.slow.at_step(n);
        let b_n = self.fast.map_or(0.0, |f| f.at_step(n));
        let gamma = self.gamma;
        let state = &mut self.state;
        match self.algorithm {
            Algorithm::Td0 { rho_mode } => td0_step(state, sample, rho, rho_mode, a_n, features, gamma),
            Algorithm::Ontdc => ontdc_step(state, sample, rho, a_n, b_n, features, gamma),
            Algorithm::Offtdc => {
                let matched = self.target_actions.as_ref().is_some_and(|t| t[sample.state] == sample.action);
                offtdc_step(state, sample, matched, a_n, b_n, features, gamma)
            }
            // λ was range-checked at construction
            Algorithm::TdcLambda { lambda } => {
                let _ = tdc_lambda_step(state, sample, rho, lambda, a_n, b_n, features, gamma);
            }
            Algorithm::TdLambda { lambda } => {
                let _ = td_lambda_step(state, sample, rho, lambda, a_n, features, gamma);
            }
        }
    }
}
