//! The two off-policy counterexamples: the two-state "θ → 2θ" problem and
//! the 7-star version of Baird's counterexample.
//!
//! # Coordinate conventions
//!
//! θ→2θ: states 0 and 1 with `φ = 1` and `φ = 2` (`d = 1`). Action 0 moves to
//! state 0, action 1 moves to state 1. The behavior policy keeps the current
//! state with probability `p`; the target always takes action 1.
//!
//! Baird 7-star: states 0..=5 are the six outer states, state 6 is the hub
//! ("state 7"). Action 0 (solid) moves to the hub, action 1 (dashed) moves to
//! one of the outer states uniformly. `d = 8`: coordinates 0..=6 are the
//! per-state weights `θ(1..7)` and coordinate 7 is the shared bias `θ₀`, so
//! `φ(s) = 2e_s + e_7` for outer states and `φ(hub) = e_6 + 2e_7`. The initial
//! vector `(1,1,1,1,1,1,10,1)` therefore sets `θ(1..6) = 1`, `θ(7) = 10`, `θ₀ = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Environment, FeatureMap, FiniteMdp, MdpError, Policy, PolicyPair};

pub const THETA2THETA_GAMMA: f64 = 0.9;
pub const BAIRD_GAMMA: f64 = 0.99;
pub const BAIRD_HUB: usize = 6;
pub const BAIRD_INITIAL_THETA: [f64; 8] = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("{name} = {value} must lie strictly inside (0, 1)")]
    Range { name: &'static str, value: f64 },
    #[error("initial {name} has length {got}, the environment has d = {expected}")]
    Dimension { name: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn check_unit(name: &'static str, value: f64) -> Result<(), EnvError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(EnvError::Range { name, value })
    }
}

/// An environment with its exact target value function.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub env: Environment,
    pub true_values: Vec<f64>,
}

pub fn theta_2theta(p: f64, gamma: f64) -> Result<Benchmark, EnvError> {
    check_unit("p", p)?;
    check_unit("gamma", gamma)?;
    // (s, a, s'): action a moves to state a
    let mut transition = vec![0.0; 8];
    for s in 0..2 {
        for a in 0..2 {
            transition[(s * 2 + a) * 2 + a] = 1.0;
        }
    }
    let mdp = FiniteMdp::new(2, 2, transition, vec![0.0; 8], gamma)?;
    let behavior = Policy::from_rows(&[vec![p, 1.0 - p], vec![1.0 - p, p]])?;
    let target = Policy::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]])?;
    let features = FeatureMap::from_rows(&[vec![1.0], vec![2.0]])?;
    let env = Environment::new(mdp, PolicyPair::new(behavior, target)?, features)?;
    Ok(Benchmark { env, true_values: vec![0.0; 2] })
}

pub fn baird7(q: f64, gamma: f64) -> Result<Benchmark, EnvError> {
    check_unit("q", q)?;
    check_unit("gamma", gamma)?;
    let n = 7;
    let mut transition = vec![0.0; n * 2 * n];
    for s in 0..n {
        transition[(s * 2) * n + BAIRD_HUB] = 1.0;
        for next in 0..BAIRD_HUB {
            transition[(s * 2 + 1) * n + next] = 1.0 / 6.0;
        }
    }
    let mdp = FiniteMdp::new(n, 2, transition, vec![0.0; n * 2 * n], gamma)?;
    let behavior = Policy::new(n, 2, [q, 1.0 - q].repeat(n))?;
    let target = Policy::new(n, 2, [1.0, 0.0].repeat(n))?;
    let mut phi = vec![0.0; n * 8];
    for s in 0..BAIRD_HUB {
        phi[s * 8 + s] = 2.0;
        phi[s * 8 + 7] = 1.0;
    }
    phi[BAIRD_HUB * 8 + BAIRD_HUB] = 1.0;
    phi[BAIRD_HUB * 8 + 7] = 2.0;
    let features = FeatureMap::new(n, 8, phi)?;
    let env = Environment::new(mdp, PolicyPair::new(behavior, target)?, features)?;
    Ok(Benchmark { env, true_values: vec![0.0; n] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BenchmarkKind {
    Baird7 { q: f64 },
    Theta2theta { p: f64 },
}

/// A benchmark together with discount and initial iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    #[serde(flatten)]
    pub kind: BenchmarkKind,
    pub gamma: f64,
    pub initial_theta: Vec<f64>,
    pub initial_w: Vec<f64>,
}

impl BenchmarkSpec {
    /// Baird with `γ = 0.99`, `θ₀ = (1,1,1,1,1,1,10,1)`, `w₀ = 0`.
    pub fn baird7(q: f64) -> Self {
        Self {
            kind: BenchmarkKind::Baird7 { q },
            gamma: BAIRD_GAMMA,
            initial_theta: BAIRD_INITIAL_THETA.to_vec(),
            initial_w: vec![0.0; 8],
        }
    }

    /// θ→2θ with `γ = 0.9`, `θ₀ = 1`, `w₀ = 0`.
    pub fn theta_2theta(p: f64) -> Self {
        Self {
            kind: BenchmarkKind::Theta2theta { p },
            gamma: THETA2THETA_GAMMA,
            initial_theta: vec![1.0],
            initial_w: vec![0.0],
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn build(&self) -> Result<Benchmark, EnvError> {
        let bench = match self.kind {
            BenchmarkKind::Baird7 { q } => baird7(q, self.gamma)?,
            BenchmarkKind::Theta2theta { p } => theta_2theta(p, self.gamma)?,
        };
        let d = bench.env.dim();
        for (name, v) in [("theta", &self.initial_theta), ("w", &self.initial_w)] {
            if v.len() != d {
                return Err(EnvError::Dimension { name, expected: d, got: v.len() });
            }
        }
        Ok(bench)
    }
}
