//! Finite MDPs, behavior/target policy pairs, linear features and
//! trajectory sampling under the behavior policy.

use std::fmt;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use thiserror::Error;

/// Tolerance on probability row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("behavior policy assigns zero probability to action {action} in state {state}")]
    ZeroBehavior { state: usize, action: usize },
    #[error("state {state} or action {action} out of range")]
    OutOfRange { state: usize, action: usize },
}

/// Finite MDP with transition kernel `p(s'|s,a)`, expected rewards `r(s,a,s')`
/// and discount factor. Tensors are stored densely in `(s, a, s')` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
}

impl FiniteMdp {
    /// Builds an MDP from flat `(s, a, s')` tensors. Only the shapes are checked here;
    /// probabilistic invariants are reported by [`validate`].
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self, MdpError> {
        if num_states == 0 || num_actions == 0 {
            return Err(MdpError::Shape("num_states and num_actions must be positive".into()));
        }
        let len = num_states * num_actions * num_states;
        if transition.len() != len {
            return Err(MdpError::Shape(format!(
                "transition has {} entries, expected {len}",
                transition.len()
            )));
        }
        if reward.len() != len {
            return Err(MdpError::Shape(format!("reward has {} entries, expected {len}", reward.len())));
        }
        if transition.iter().any(|x| !x.is_finite()) {
            return Err(MdpError::NonFinite("transition"));
        }
        if reward.iter().any(|x| !x.is_finite()) {
            return Err(MdpError::NonFinite("reward"));
        }
        if !discount.is_finite() {
            return Err(MdpError::NonFinite("discount"));
        }
        Ok(Self { num_states, num_actions, transition, reward, discount })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Same MDP with a different discount factor.
    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    fn offset(&self, s: usize, a: usize) -> usize {
        (s * self.num_actions + a) * self.num_states
    }

    /// Next-state distribution `p(·|s,a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.transition[o..o + self.num_states]
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[self.offset(s, a) + next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.offset(s, a) + next]
    }

    pub fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_tensor(&self) -> &[f64] {
        &self.reward
    }
}

/// Row-stochastic `num_states × num_actions` matrix `π(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if probs.len() != num_states * num_actions {
            return Err(MdpError::Shape(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        if probs.iter().any(|x| !x.is_finite()) {
            return Err(MdpError::NonFinite("policy"));
        }
        Ok(Self { num_states, num_actions, probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MdpError> {
        let num_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_actions) {
            return Err(MdpError::Shape("ragged policy rows".into()));
        }
        Self::new(rows.len(), num_actions, rows.concat())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.row(s).to_vec()).collect()
    }

    /// The action taken with probability one in each state, if the policy is deterministic.
    pub fn deterministic_actions(&self) -> Option<Vec<usize>> {
        (0..self.num_states)
            .map(|s| {
                let row = self.row(s);
                let a = row.iter().position(|&p| p == 1.0)?;
                row.iter().enumerate().all(|(b, &p)| b == a || p == 0.0).then_some(a)
            })
            .collect()
    }
}

/// Behavior policy `π_b` generating the data and target policy `π` being evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub behavior: Policy,
    pub target: Policy,
}

impl PolicyPair {
    pub fn new(behavior: Policy, target: Policy) -> Result<Self, MdpError> {
        if behavior.num_states != target.num_states || behavior.num_actions != target.num_actions {
            return Err(MdpError::Shape("behavior and target policies differ in shape".into()));
        }
        Ok(Self { behavior, target })
    }

    /// On-policy pair with `π = π_b`.
    pub fn on_policy(policy: Policy) -> Self {
        Self { behavior: policy.clone(), target: policy }
    }

    /// Table of `ρ(s,a)` in `(s, a)` order.
    pub fn ratio_table(&self) -> Result<Vec<f64>, MdpError> {
        let mut out = Vec::with_capacity(self.behavior.probs.len());
        for s in 0..self.behavior.num_states {
            for a in 0..self.behavior.num_actions {
                out.push(importance_ratio(self, s, a)?);
            }
        }
        Ok(out)
    }

    /// `L = max_{(s,a)} π(a|s)/π_b(a|s)`.
    pub fn max_ratio(&self) -> Result<f64, MdpError> {
        Ok(self.ratio_table()?.into_iter().fold(0.0, f64::max))
    }
}

/// Per-state feature vectors `φ(s) ∈ R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    num_states: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(num_states: usize, dim: usize, data: Vec<f64>) -> Result<Self, MdpError> {
        if dim == 0 {
            return Err(MdpError::Shape("feature dimension must be at least 1".into()));
        }
        if data.len() != num_states * dim {
            return Err(MdpError::Shape(format!(
                "features have {} entries, expected {}",
                data.len(),
                num_states * dim
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(MdpError::NonFinite("features"));
        }
        Ok(Self { num_states, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MdpError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(MdpError::Shape("ragged feature rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    /// Tabular features: `φ(s) = e_s`.
    pub fn identity(num_states: usize) -> Self {
        let mut data = vec![0.0; num_states * num_states];
        for s in 0..num_states {
            data[s * num_states + s] = 1.0;
        }
        Self { num_states, dim: num_states, data }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self, s: usize) -> &[f64] {
        &self.data[s * self.dim..(s + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.phi(s).to_vec()).collect()
    }

    /// `Φ` with one row per state.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_states, self.dim, &self.data)
    }

    /// `V_θ(s) = θᵀφ(s)`.
    pub fn value(&self, theta: &[f64], s: usize) -> f64 {
        dot(self.phi(s), theta)
    }

    /// `M = max_s ‖φ(s)‖`.
    pub fn max_norm(&self) -> f64 {
        (0..self.num_states)
            .map(|s| dot(self.phi(s), self.phi(s)).sqrt())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// A complete problem instance: dynamics, policies and features.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub mdp: FiniteMdp,
    pub policies: PolicyPair,
    pub features: FeatureMap,
}

impl Environment {
    pub fn new(mdp: FiniteMdp, policies: PolicyPair, features: FeatureMap) -> Result<Self, MdpError> {
        check_shapes(&mdp, &policies)?;
        if features.num_states != mdp.num_states {
            return Err(MdpError::Shape(format!(
                "features cover {} states, MDP has {}",
                features.num_states, mdp.num_states
            )));
        }
        Ok(Self { mdp, policies, features })
    }

    pub fn dim(&self) -> usize {
        self.features.dim
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.discount
    }
}

/// One observed transition `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// An invariant breached by an MDP/policy pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionRow { state: usize, action: usize, sum: f64 },
    NegativeTransition { state: usize, action: usize, next_state: usize },
    BehaviorRow { state: usize, sum: f64 },
    TargetRow { state: usize, sum: f64 },
    NegativeTarget { state: usize, action: usize },
    BehaviorPositivity { state: usize, action: usize },
    DiscountRange { discount: f64 },
}

impl Violation {
    /// Short name of the invariant.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::TransitionRow { .. } => "transition row sum",
            Violation::NegativeTransition { .. } => "transition nonnegativity",
            Violation::BehaviorRow { .. } => "behavior row sum",
            Violation::TargetRow { .. } => "target row sum",
            Violation::NegativeTarget { .. } => "target nonnegativity",
            Violation::BehaviorPositivity { .. } => "behavior positivity",
            Violation::DiscountRange { .. } => "discount range",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionRow { state, action, sum } => {
                write!(f, "{}: p(.|{state},{action}) sums to {sum}", self.kind())
            }
            Violation::NegativeTransition { state, action, next_state } => {
                write!(f, "{}: p({next_state}|{state},{action}) < 0", self.kind())
            }
            Violation::BehaviorRow { state, sum } | Violation::TargetRow { state, sum } => {
                write!(f, "{}: row {state} sums to {sum}", self.kind())
            }
            Violation::NegativeTarget { state, action } => {
                write!(f, "{}: pi({action}|{state}) < 0", self.kind())
            }
            Violation::BehaviorPositivity { state, action } => {
                write!(f, "{}: pi_b({action}|{state}) is not positive", self.kind())
            }
            Violation::DiscountRange { discount } => {
                write!(f, "{}: gamma = {discount} is outside (0, 1)", self.kind())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: &str) -> bool {
        self.violations.iter().any(|v| v.kind() == kind)
    }
}

fn check_shapes(mdp: &FiniteMdp, policies: &PolicyPair) -> Result<(), MdpError> {
    for (name, p) in [("behavior", &policies.behavior), ("target", &policies.target)] {
        if p.num_states != mdp.num_states || p.num_actions != mdp.num_actions {
            return Err(MdpError::Shape(format!(
                "{name} policy is {}x{}, MDP has {} states and {} actions",
                p.num_states, p.num_actions, mdp.num_states, mdp.num_actions
            )));
        }
    }
    Ok(())
}

/// Checks every probabilistic invariant; shape mismatches are a hard error.
pub fn validate(mdp: &FiniteMdp, policies: &PolicyPair) -> Result<ValidationReport, MdpError> {
    check_shapes(mdp, policies)?;
    let mut violations = Vec::new();
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let row = mdp.transition_row(s, a);
            if let Some(next_state) = row.iter().position(|&p| p < 0.0) {
                violations.push(Violation::NegativeTransition { state: s, action: a, next_state });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                violations.push(Violation::TransitionRow { state: s, action: a, sum });
            }
        }
        let sum: f64 = policies.behavior.row(s).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            violations.push(Violation::BehaviorRow { state: s, sum });
        }
        let sum: f64 = policies.target.row(s).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            violations.push(Violation::TargetRow { state: s, sum });
        }
        for a in 0..mdp.num_actions {
            if policies.behavior.prob(s, a) <= 0.0 {
                violations.push(Violation::BehaviorPositivity { state: s, action: a });
            }
            if policies.target.prob(s, a) < 0.0 {
                violations.push(Violation::NegativeTarget { state: s, action: a });
            }
        }
    }
    if !(mdp.discount > 0.0 && mdp.discount < 1.0) {
        violations.push(Violation::DiscountRange { discount: mdp.discount });
    }
    Ok(ValidationReport { violations })
}

/// State-to-state kernel of the behavior chain, `P_b(s,s') = Σ_a π_b(a|s) p(s'|s,a)`.
pub fn behavior_kernel(mdp: &FiniteMdp, policies: &PolicyPair) -> DMatrix<f64> {
    policy_kernel(mdp, &policies.behavior)
}

pub fn policy_kernel(mdp: &FiniteMdp, policy: &Policy) -> DMatrix<f64> {
    let n = mdp.num_states;
    DMatrix::from_fn(n, n, |s, next| {
        (0..mdp.num_actions)
            .map(|a| policy.prob(s, a) * mdp.transition_prob(s, a, next))
            .sum()
    })
}

/// `ρ(s,a) = π(a|s)/π_b(a|s)`.
pub fn importance_ratio(policies: &PolicyPair, s: usize, a: usize) -> Result<f64, MdpError> {
    if s >= policies.behavior.num_states || a >= policies.behavior.num_actions {
        return Err(MdpError::OutOfRange { state: s, action: a });
    }
    let pb = policies.behavior.prob(s, a);
    if pb <= 0.0 {
        return Err(MdpError::ZeroBehavior { state: s, action: a });
    }
    Ok(policies.target.prob(s, a) / pb)
}

/// Per-run RNG: one ChaCha stream per run index under a shared experiment seed,
/// so a run's samples do not depend on scheduling.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Endless behavior-policy trajectory `(X_n, A_n, R_n, X_{n+1})`.
///
/// Rewards are the expected rewards `r(s,a,s')` unless reward noise is enabled.
#[derive(Debug, Clone)]
pub struct TrajectoryStream<'a> {
    env: &'a Environment,
    rng: ChaCha8Rng,
    current_state: usize,
    actions: Vec<WeightedIndex<f64>>,
    next_states: Vec<WeightedIndex<f64>>,
    reward_noise: Option<Normal<f64>>,
}

impl<'a> TrajectoryStream<'a> {
    /// Stream seeded from a 64-bit seed (stream 0).
    pub fn new(env: &'a Environment, seed: u64, initial_state: usize) -> Result<Self, MdpError> {
        Self::with_rng(env, run_rng(seed, 0), initial_state)
    }

    pub fn with_rng(env: &'a Environment, rng: ChaCha8Rng, initial_state: usize) -> Result<Self, MdpError> {
        let mdp = &env.mdp;
        if initial_state >= mdp.num_states {
            return Err(MdpError::OutOfRange { state: initial_state, action: 0 });
        }
        let weights = |w: &[f64], what: &str| {
            WeightedIndex::new(w.iter().copied())
                .map_err(|e| MdpError::Shape(format!("cannot sample {what}: {e}")))
        };
        let actions = (0..mdp.num_states)
            .map(|s| weights(env.policies.behavior.row(s), "behavior policy"))
            .collect::<Result<_, _>>()?;
        let mut next_states = Vec::with_capacity(mdp.num_states * mdp.num_actions);
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                next_states.push(weights(mdp.transition_row(s, a), "transition")?);
            }
        }
        Ok(Self { env, rng, current_state: initial_state, actions, next_states, reward_noise: None })
    }

    /// Adds zero-mean Gaussian noise with the given standard deviation to every reward.
    pub fn with_reward_noise(mut self, std_dev: f64) -> Result<Self, MdpError> {
        let normal = Normal::new(0.0, std_dev).map_err(|e| MdpError::Shape(format!("reward noise: {e}")))?;
        self.reward_noise = Some(normal);
        Ok(self)
    }

    pub fn current_state(&self) -> usize {
        self.current_state
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn next_sample(&mut self) -> TransitionSample {
        let s = self.current_state;
        let a = self.actions[s].sample(&mut self.rng);
        let next = self.next_states[s * self.env.mdp.num_actions + a].sample(&mut self.rng);
        let mut reward = self.env.mdp.reward(s, a, next);
        if let Some(noise) = &self.reward_noise {
            reward += noise.sample(&mut self.rng);
        }
        self.current_state = next;
        TransitionSample { state: s, action: a, reward, next_state: next }
    }
}

impl Iterator for TrajectoryStream<'_> {
    type Item = TransitionSample;

    fn next(&mut self) -> Option<TransitionSample> {
        Some(self.next_sample())
    }
}

/// Draws an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
