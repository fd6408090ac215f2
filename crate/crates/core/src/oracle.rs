//! Closed-form stationary quantities of the behavior chain: `ν`, `A`, `b`, `C`,
//! the cross term `B = γE[ρφ(Y)φ(X)ᵀ]`, the TD fixed point, the MSPBE and its gradient.
//!
//! Singular `A` or `C` is tolerated everywhere: solves fall back to the
//! minimum-norm pseudo-inverse and the model carries flags saying so.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SVD};
use thiserror::Error;

use crate::mdp::{behavior_kernel, importance_ratio, policy_kernel, Environment, MdpError, Policy};

/// Relative singular-value cutoff: `σ < SINGULAR_RTOL · σ_max` counts as zero.
pub const SINGULAR_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("behavior chain is reducible; states {unreachable:?} are not mutually reachable with state 0")]
    Reducible { unreachable: Vec<usize> },
    #[error("kernel is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("linear solve failed: {0}")]
    Solve(&'static str),
}

/// Indices of states not in the same communicating class as state 0.
fn unreachable_states(kernel: &DMatrix<f64>) -> Vec<usize> {
    let n = kernel.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(s) = queue.pop_front() {
            for t in 0..n {
                let p = if forward { kernel[(s, t)] } else { kernel[(t, s)] };
                if p > 0.0 && !seen[t] {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let bwd = reach(false);
    (0..n).filter(|&s| !(fwd[s] && bwd[s])).collect()
}

pub fn is_irreducible(kernel: &DMatrix<f64>) -> bool {
    kernel.nrows() > 0 && unreachable_states(kernel).is_empty()
}

/// Stationary law `ν` of an irreducible row-stochastic kernel, from the linear system
/// `(Pᵀ − I)ν = 0` with one equation replaced by `Σν = 1`.
pub fn stationary_distribution(kernel: &DMatrix<f64>) -> Result<DVector<f64>, OracleError> {
    let n = kernel.nrows();
    if kernel.ncols() != n || n == 0 {
        return Err(OracleError::NotSquare(n, kernel.ncols()));
    }
    let unreachable = unreachable_states(kernel);
    if !unreachable.is_empty() {
        return Err(OracleError::Reducible { unreachable });
    }
    let mut m = kernel.transpose() - DMatrix::identity(n, n);
    m.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mut nu = m.lu().solve(&rhs).ok_or(OracleError::Solve("stationary system is singular"))?;
    // clean round-off so that ν is a proper probability vector
    nu.iter_mut().for_each(|x| *x = x.max(0.0));
    let total = nu.sum();
    nu /= total;
    Ok(nu)
}

/// Minimum-norm least-squares solver with the standard relative rank cutoff.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pinv: DMatrix<f64>,
    singular: bool,
    cond: f64,
    sigma_max: f64,
    sigma_min: f64,
}

impl PseudoInverse {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let svd = SVD::new(m.clone(), true, true);
        let sigma_max = svd.singular_values.max();
        let sigma_min = svd.singular_values.min();
        let cutoff = SINGULAR_RTOL * sigma_max;
        let singular = sigma_max.is_nan() || sigma_max <= 0.0 || sigma_min < cutoff;
        let cond = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY };
        let pinv = svd
            .pseudo_inverse(cutoff.max(f64::MIN_POSITIVE))
            .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()));
        Self { pinv, singular, cond, sigma_max, sigma_min }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        &self.pinv * rhs
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// `σ_max/σ_min`, infinite for an exactly rank-deficient matrix.
    pub fn condition_number(&self) -> f64 {
        self.cond
    }

    pub fn singular_value_range(&self) -> (f64, f64) {
        (self.sigma_min, self.sigma_max)
    }
}

/// Expectations under `X ∼ ν`, `A ∼ π_b(·|X)`, `Y ∼ p(·|X,A)`.
#[derive(Debug, Clone)]
pub struct StationaryModel {
    pub gamma: f64,
    pub nu: DVector<f64>,
    /// `E[ρ φ(X)(φ(X) − γφ(Y))ᵀ]`
    pub a: DMatrix<f64>,
    /// `E[ρ R φ(X)]`
    pub b: DVector<f64>,
    /// `E[φ(X)φ(X)ᵀ]`
    pub c: DMatrix<f64>,
    /// `γE[ρ φ(Y)φ(X)ᵀ]`, the TDC correction matrix.
    pub cross: DMatrix<f64>,
    a_inv: PseudoInverse,
    c_inv: PseudoInverse,
}

/// Builds the model by exact enumeration over `(s, a, s')`.
pub fn build_stationary_model(env: &Environment) -> Result<StationaryModel, OracleError> {
    let (mdp, policies, features) = (&env.mdp, &env.policies, &env.features);
    let kernel = behavior_kernel(mdp, policies);
    let nu = stationary_distribution(&kernel)?;
    let d = features.dim();
    let gamma = mdp.discount();
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    let mut c = DMatrix::zeros(d, d);
    let mut cross = DMatrix::zeros(d, d);
    for s in 0..mdp.num_states() {
        let phi = DVector::from_column_slice(features.phi(s));
        c += nu[s] * &phi * phi.transpose();
        for act in 0..mdp.num_actions() {
            let rho = importance_ratio(policies, s, act)?;
            let pb = policies.behavior.prob(s, act);
            for next in 0..mdp.num_states() {
                let weight = nu[s] * pb * mdp.transition_prob(s, act, next) * rho;
                if weight == 0.0 {
                    continue;
                }
                let phi_next = DVector::from_column_slice(features.phi(next));
                let diff = &phi - gamma * &phi_next;
                a += weight * &phi * diff.transpose();
                b += weight * mdp.reward(s, act, next) * &phi;
                cross += (weight * gamma) * &phi_next * phi.transpose();
            }
        }
    }
    let c = (&c + c.transpose()) * 0.5;
    let a_inv = PseudoInverse::new(&a);
    let c_inv = PseudoInverse::new(&c);
    Ok(StationaryModel { gamma, nu, a, b, c, cross, a_inv, c_inv })
}

/// `θ*` together with whether it is the unique solution of `Aθ = b`.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub theta: DVector<f64>,
    pub unique: bool,
}

impl StationaryModel {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a_singular(&self) -> bool {
        self.a_inv.is_singular()
    }

    pub fn c_singular(&self) -> bool {
        self.c_inv.is_singular()
    }

    /// True when some solve falls back to the pseudo-inverse.
    pub fn degenerate(&self) -> bool {
        self.a_singular() || self.c_singular()
    }

    pub fn a_inverse(&self) -> &PseudoInverse {
        &self.a_inv
    }

    pub fn c_inverse(&self) -> &PseudoInverse {
        &self.c_inv
    }

    /// `E[ρδ(θ)φ] = b − Aθ`.
    pub fn expected_td_update(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * theta
    }

    /// `λ(θ) = C⁻¹(b − Aθ)`.
    pub fn quasi_stationary_w(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.c_inv.solve(&self.expected_td_update(theta))
    }

    /// `J(θ) = (b − Aθ)ᵀ C⁻¹ (b − Aθ)`.
    pub fn mspbe(&self, theta: &DVector<f64>) -> f64 {
        let g = self.expected_td_update(theta);
        g.dot(&self.c_inv.solve(&g)).max(0.0)
    }

    /// `−½∇J(θ) = (b − Aθ) − B λ(θ)`.
    pub fn mspbe_neg_half_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.expected_td_update(theta) - &self.cross * self.quasi_stationary_w(theta)
    }

    /// Distance from `θ` to the solution set of `Aθ = b` (a point when `A` is nonsingular).
    pub fn fixed_point_distance(&self, theta: &DVector<f64>) -> f64 {
        self.a_inv.solve(&(&self.a * theta - &self.b)).norm()
    }
}

pub fn td_fixed_point(model: &StationaryModel) -> FixedPoint {
    FixedPoint { theta: model.a_inv.solve(&model.b), unique: !model.a_singular() }
}

/// Checks of the hypotheses the two-timescale convergence result needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub irreducible: bool,
    pub behavior_positive: bool,
    pub cond_a: f64,
    pub cond_c: f64,
    pub singular_a: bool,
    pub singular_c: bool,
    /// `L = max ρ`
    pub ratio_bound_l: f64,
    /// `M = max_s ‖φ(s)‖`
    pub feature_bound_m: f64,
}

impl ConditionReport {
    /// Irreducibility, `π_b > 0` and nonsingular `A` and `C` all hold.
    pub fn hypotheses_hold(&self) -> bool {
        self.irreducible && self.behavior_positive && !self.singular_a && !self.singular_c
    }

    /// Largest trace parameter for which the convergence argument extends, `1/(Lγ)`.
    pub fn lambda_bound(&self, gamma: f64) -> f64 {
        1.0 / (self.ratio_bound_l * gamma)
    }
}

pub fn check_conditions(model: &StationaryModel, env: &Environment) -> ConditionReport {
    let kernel = behavior_kernel(&env.mdp, &env.policies);
    let behavior = &env.policies.behavior;
    let behavior_positive = (0..behavior.num_states())
        .all(|s| behavior.row(s).iter().all(|&p| p > 0.0));
    ConditionReport {
        irreducible: is_irreducible(&kernel),
        behavior_positive,
        cond_a: model.a_inv.condition_number(),
        cond_c: model.c_inv.condition_number(),
        singular_a: model.a_singular(),
        singular_c: model.c_singular(),
        ratio_bound_l: env.policies.max_ratio().unwrap_or(f64::INFINITY),
        feature_bound_m: env.features.max_norm(),
    }
}

/// Exact value function of `policy`: `V = (I − γP_π)⁻¹ r_π`.
pub fn true_values(env: &Environment, policy: &Policy) -> Result<DVector<f64>, OracleError> {
    let mdp = &env.mdp;
    let n = mdp.num_states();
    let p = policy_kernel(mdp, policy);
    let r = DVector::from_fn(n, |s, _| {
        let mut acc = 0.0;
        for a in 0..mdp.num_actions() {
            for next in 0..n {
                acc += policy.prob(s, a) * mdp.transition_prob(s, a, next) * mdp.reward(s, a, next);
            }
        }
        acc
    });
    let m = DMatrix::identity(n, n) - mdp.discount() * p;
    m.lu().solve(&r).ok_or(OracleError::Solve("I - gamma P is singular"))
}
