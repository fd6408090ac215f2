//! Mean ODEs of the two-timescale TDC recursion and a fixed-step RK4 integrator.
//!
//! Fast ODE: `ẇ = (b − Aθ) − Cw` with `θ` frozen; its equilibrium is `λ(θ)`.
//! Slow ODE: `θ̇ = ĥ(θ)`, the ONTDC mean field evaluated at `w = λ(θ)`.

use nalgebra::DVector;

use crate::mdp::Environment;
use crate::mdp::importance_ratio;
use crate::oracle::{OracleError, StationaryModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub dt: f64,
    pub horizon: f64,
    pub tolerance: f64,
    /// Keep every `record_every`-th point in the returned trajectory (first and last are always kept).
    pub record_every: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 1e3, tolerance: 1e-8, record_every: 1000 }
    }
}

#[derive(Debug, Clone)]
pub struct OdeRun {
    pub trajectory: Vec<(f64, DVector<f64>)>,
    pub terminal: DVector<f64>,
    /// `‖field(terminal)‖`
    pub residual: f64,
    pub converged: bool,
    /// A non-finite state was produced; `terminal` is the last finite point.
    pub diverged: bool,
}

fn rk4_step<F>(field: &F, x: &DVector<f64>, dt: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let k1 = field(x);
    let k2 = field(&(x + &k1 * (dt / 2.0)));
    let k3 = field(&(x + &k2 * (dt / 2.0)));
    let k4 = field(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Integrates `ẋ = field(x)` from `x0` over `[0, horizon]`, calling `observe(t, x)` after every step.
pub fn integrate_with<F, O>(field: F, x0: &DVector<f64>, opts: &OdeOptions, mut observe: O) -> OdeRun
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    O: FnMut(f64, &DVector<f64>),
{
    assert!(opts.horizon > 0.0 && opts.dt > 0.0, "horizon and dt must be positive");
    let steps = (opts.horizon / opts.dt).round().max(1.0) as u64;
    let every = opts.record_every.max(1) as u64;
    let mut x = x0.clone();
    let mut trajectory = vec![(0.0, x.clone())];
    let mut diverged = false;
    let mut t = 0.0;
    observe(t, &x);
    for k in 1..=steps {
        let next = rk4_step(&field, &x, opts.dt);
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        x = next;
        t = k as f64 * opts.dt;
        observe(t, &x);
        if k % every == 0 && k != steps {
            trajectory.push((t, x.clone()));
        }
    }
    if trajectory.last().is_none_or(|(last, _)| *last != t) {
        trajectory.push((t, x.clone()));
    }
    let residual = field(&x).norm();
    let converged = !diverged && residual < opts.tolerance;
    OdeRun { trajectory, terminal: x, residual, converged, diverged }
}

pub fn integrate<F>(field: F, x0: &DVector<f64>, opts: &OdeOptions) -> OdeRun
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    integrate_with(field, x0, opts, |_, _| {})
}

/// `ĝ(θ, w) = (b − Aθ) − Cw`.
pub fn fast_field(model: &StationaryModel, theta: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    model.expected_td_update(theta) - &model.c * w
}

struct Term {
    weight: f64,
    state: usize,
    next: usize,
    reward: f64,
}

/// Stationary averages of the ONTDC increments, enumerated over `(s, a, s')`.
///
/// This computes the slow field directly from the transition law rather than
/// from the assembled `A`, `b`, `B` matrices.
pub struct MeanField<'a> {
    model: &'a StationaryModel,
    env: &'a Environment,
    terms: Vec<Term>,
}

impl<'a> MeanField<'a> {
    pub fn new(model: &'a StationaryModel, env: &'a Environment) -> Result<Self, OracleError> {
        let mdp = &env.mdp;
        let mut terms = Vec::new();
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let rho = importance_ratio(&env.policies, s, a)?;
                let pb = env.policies.behavior.prob(s, a);
                for next in 0..mdp.num_states() {
                    let weight = model.nu[s] * pb * mdp.transition_prob(s, a, next) * rho;
                    if weight != 0.0 {
                        terms.push(Term { weight, state: s, next, reward: mdp.reward(s, a, next) });
                    }
                }
            }
        }
        Ok(Self { model, env, terms })
    }

    /// `h(θ, w) = E[ρ(δ(θ)φ − γφ'φᵀw)]`.
    pub fn ontdc(&self, theta: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let f = &self.env.features;
        let gamma = self.env.gamma();
        let mut out = DVector::zeros(theta.len());
        for term in &self.terms {
            let phi = f.phi(term.state);
            let phi_next = f.phi(term.next);
            let delta = term.reward + gamma * f.value(theta.as_slice(), term.next) - f.value(theta.as_slice(), term.state);
            let phi_w: f64 = phi.iter().zip(w.iter()).map(|(x, y)| x * y).sum();
            for i in 0..out.len() {
                out[i] += term.weight * (delta * phi[i] - gamma * phi_next[i] * phi_w);
            }
        }
        out
    }

    /// `ĥ(θ) = h(θ, λ(θ))`.
    pub fn slow(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.ontdc(theta, &self.model.quasi_stationary_w(theta))
    }

    pub fn fast(&self, theta: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        fast_field(self.model, theta, w)
    }
}

/// Slow field built from the model and environment.
pub fn slow_field(model: &StationaryModel, env: &Environment, theta: &DVector<f64>) -> Result<DVector<f64>, OracleError> {
    Ok(MeanField::new(model, env)?.slow(theta))
}
