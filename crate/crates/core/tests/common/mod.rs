#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdc_core::mdp::{policy_kernel, behavior_kernel};
use tdc_core::{Environment, FeatureMap, FiniteMdp, Policy, PolicyPair};

fn simplex(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Dense random environment: every transition and behavior probability is positive,
/// features have full column rank with probability one.
pub fn random_env(seed: u64, n: usize, actions: usize, dim: usize, gamma: f64) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n * actions * n);
    for _ in 0..n * actions {
        transition.extend(simplex(&mut rng, n, 0.05));
    }
    let reward: Vec<f64> = (0..n * actions * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mdp = FiniteMdp::new(n, actions, transition, reward, gamma).unwrap();
    let behavior: Vec<f64> = (0..n).flat_map(|_| simplex(&mut rng, actions, 0.2)).collect();
    let target: Vec<f64> = (0..n).flat_map(|_| simplex(&mut rng, actions, 0.0)).collect();
    let policies = PolicyPair::new(
        Policy::new(n, actions, behavior).unwrap(),
        Policy::new(n, actions, target).unwrap(),
    )
    .unwrap();
    let phi: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Environment::new(mdp, policies, FeatureMap::new(n, dim, phi).unwrap()).unwrap()
}

/// Stationary law by repeated multiplication.
pub fn power_iteration(kernel: &DMatrix<f64>) -> DVector<f64> {
    let n = kernel.nrows();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..100_000 {
        let next = kernel.transpose() * &mu;
        if (&next - &mu).amax() < 1e-15 {
            return next;
        }
        mu = next;
    }
    mu
}

pub fn target_kernel(env: &Environment) -> DMatrix<f64> {
    policy_kernel(&env.mdp, &env.policies.target)
}

pub fn behavior_nu(env: &Environment) -> DVector<f64> {
    power_iteration(&behavior_kernel(&env.mdp, &env.policies))
}

/// Expected one-step target reward per state.
pub fn target_rewards(env: &Environment) -> DVector<f64> {
    let mdp = &env.mdp;
    let n = mdp.num_states();
    DVector::from_fn(n, |s, _| {
        let mut acc = 0.0;
        for a in 0..mdp.num_actions() {
            for t in 0..n {
                acc += env.policies.target.prob(s, a) * mdp.transition_prob(s, a, t) * mdp.reward(s, a, t);
            }
        }
        acc
    })
}

/// `A_λ = ΦᵀD(I − γλP)⁻¹(I − γP)Φ` and `b_λ = ΦᵀD(I − γλP)⁻¹r` for the importance-weighted trace.
pub fn trace_matrices(env: &Environment, lambda: f64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = env.mdp.num_states();
    let gamma = env.gamma();
    let phi = env.features.matrix();
    let p = target_kernel(env);
    let d = DMatrix::from_diagonal(&behavior_nu(env));
    let id = DMatrix::<f64>::identity(n, n);
    let k = (&id - gamma * lambda * &p).try_inverse().unwrap();
    let a = phi.transpose() * &d * &k * (&id - gamma * &p) * &phi;
    let b = phi.transpose() * &d * &k * target_rewards(env);
    // E[e_t φ_{t+1}ᵀ]
    let e_next = phi.transpose() * &d * &k * &p * &phi;
    (a, b, e_next)
}

/// MSPBE through the projection: `‖Π(TV − V)‖²_D` with `Π = Φ(ΦᵀDΦ)⁻¹ΦᵀD`.
pub fn projected_bellman_error(env: &Environment, theta: &DVector<f64>) -> f64 {
    let n = env.mdp.num_states();
    let phi = env.features.matrix();
    let nu = behavior_nu(env);
    let d = DMatrix::from_diagonal(&nu);
    let v = &phi * theta;
    let tv = target_rewards(env) + env.gamma() * target_kernel(env) * &v;
    let gram = phi.transpose() * &d * &phi;
    let proj = &phi * gram.try_inverse().unwrap() * phi.transpose() * &d;
    let err = proj * (tv - v);
    (0..n).map(|s| nu[s] * err[s] * err[s]).sum()
}

/// Mean and standard error from `batches` equal consecutive batches.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let k = means.len() as f64;
    let m = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}
