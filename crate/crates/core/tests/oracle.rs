mod common;

use approx::assert_relative_eq;
use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;
use tdc_core::envs::{baird7, theta_2theta, BAIRD_GAMMA, THETA2THETA_GAMMA};
use tdc_core::mdp::behavior_kernel;
use tdc_core::oracle::{
    build_stationary_model, check_conditions, is_irreducible, stationary_distribution, td_fixed_point, true_values,
    OracleError,
};
use tdc_core::TrajectoryStream;

use common::{batch_mean_se, power_iteration, projected_bellman_error, random_env, target_kernel, target_rewards};

#[test]
fn theta2theta_hand_values() {
    let env = theta_2theta(0.5, THETA2THETA_GAMMA).unwrap().env;
    let m = build_stationary_model(&env).unwrap();
    // A = ½·2·1·(1 − 1.8) + ½·2·2·(2 − 1.8) with ρ = 2 on the target action
    assert_relative_eq!(m.a[(0, 0)], -0.2, epsilon = 1e-12);
    assert_relative_eq!(m.c[(0, 0)], 2.5, epsilon = 1e-12);
    assert_eq!(m.b[0], 0.0);
    assert_relative_eq!(m.cross[(0, 0)], 2.7, epsilon = 1e-12);
    assert_relative_eq!(m.nu[0], 0.5, epsilon = 1e-14);

    let theta = dvector![1.0];
    assert_relative_eq!(m.quasi_stationary_w(&theta)[0], 0.08, epsilon = 1e-12);
    assert_relative_eq!(m.mspbe(&theta), 0.016, epsilon = 1e-12);
    assert_relative_eq!(m.mspbe_neg_half_gradient(&theta)[0], 0.2 - 2.7 * 0.08, epsilon = 1e-12);
    let fp = td_fixed_point(&m);
    assert!(fp.unique);
    assert_eq!(fp.theta[0], 0.0);
}

#[test]
fn theta2theta_conditions() {
    let env = theta_2theta(0.5, THETA2THETA_GAMMA).unwrap().env;
    let m = build_stationary_model(&env).unwrap();
    let r = check_conditions(&m, &env);
    assert!(r.hypotheses_hold());
    assert_eq!(r.ratio_bound_l, 2.0);
    assert_eq!(r.feature_bound_m, 2.0);
    assert_relative_eq!(r.lambda_bound(0.9), 1.0 / 1.8);
}

proptest! {
    #[test]
    fn theta2theta_model_is_p_invariant(p in 0.01f64..0.99) {
        let env = theta_2theta(p, THETA2THETA_GAMMA).unwrap().env;
        let m = build_stationary_model(&env).unwrap();
        prop_assert!((m.a[(0, 0)] + 0.2).abs() < 1e-12);
        prop_assert!((m.c[(0, 0)] - 2.5).abs() < 1e-12);
        prop_assert!((m.nu[0] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn baird_is_degenerate() {
    let env = baird7(1.0 / 7.0, BAIRD_GAMMA).unwrap().env;
    let m = build_stationary_model(&env).unwrap();
    assert!(m.c_singular());
    assert!(m.a_singular());
    let report = check_conditions(&m, &env);
    assert!(!report.hypotheses_hold());
    assert!(report.irreducible && report.behavior_positive);
    assert_relative_eq!(report.ratio_bound_l, 7.0, epsilon = 1e-12);
    for s in 0..7 {
        assert_relative_eq!(m.nu[s], 1.0 / 7.0, epsilon = 1e-12);
    }

    // the minimum-norm fixed point of a zero-reward problem is the origin
    let fp = td_fixed_point(&m);
    assert!(!fp.unique);
    assert!(fp.theta.amax() < 1e-12);

    // null(Φ): 2θ_s + θ₀ = 0 on the outer states and θ_hub + 2θ₀ = 0
    let t = 3.0;
    let mut null = DVector::from_element(8, -t / 2.0);
    null[6] = -2.0 * t;
    null[7] = t;
    assert!((env.features.matrix() * &null).amax() < 1e-12);
    assert!(m.fixed_point_distance(&null) < 1e-12);
    assert!(m.mspbe(&null) < 1e-24);
}

#[test]
fn baird_initial_mspbe_matches_projection() {
    let env = baird7(1.0 / 7.0, BAIRD_GAMMA).unwrap().env;
    let m = build_stationary_model(&env).unwrap();
    let theta = DVector::from_column_slice(&tdc_core::envs::BAIRD_INITIAL_THETA);
    // Φ spans all of R⁷, so the projection is the identity
    let phi = env.features.matrix();
    let v = &phi * &theta;
    let tv = target_rewards(&env) + env.gamma() * target_kernel(&env) * &v;
    let err = tv - v;
    let expected: f64 = (0..7).map(|s| err[s] * err[s] / 7.0).sum();
    assert_relative_eq!(m.mspbe(&theta), expected, max_relative = 1e-9);
}

#[test]
fn reducible_chain_is_rejected() {
    let kernel = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.5]);
    assert!(!is_irreducible(&kernel));
    assert!(matches!(stationary_distribution(&kernel), Err(OracleError::Reducible { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stationary_matches_power_iteration(seed in any::<u64>(), n in 2usize..7, actions in 1usize..4) {
        let env = random_env(seed, n, actions, 2, 0.9);
        let kernel = behavior_kernel(&env.mdp, &env.policies);
        let nu = stationary_distribution(&kernel).unwrap();
        let reference = power_iteration(&kernel);
        prop_assert!((&nu - &reference).amax() < 1e-10);
        prop_assert!((nu.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transpose_identity(seed in any::<u64>(), n in 2usize..6, d in 1usize..4, gamma in 0.0f64..0.99) {
        let env = random_env(seed, n, 2, d.min(n), gamma);
        let m = build_stationary_model(&env).unwrap();
        // Aᵀ = C − B
        let gap = (m.a.transpose() - (&m.c - &m.cross)).amax();
        prop_assert!(gap < 1e-12, "gap {gap}");
    }

    #[test]
    fn mspbe_is_projected_error(seed in any::<u64>(), n in 2usize..6, d in 1usize..4, scale in 0.1f64..10.0) {
        let d = d.min(n);
        let env = random_env(seed, n, 2, d, 0.9);
        let m = build_stationary_model(&env).unwrap();
        prop_assume!(!m.c_singular());
        let theta = DVector::from_fn(d, |i, _| scale * ((i as f64 + 1.0) * 0.37).sin());
        let j = m.mspbe(&theta);
        let reference = projected_bellman_error(&env, &theta);
        prop_assert!(j >= 0.0);
        prop_assert!((j - reference).abs() <= 1e-9 * reference.max(1e-12), "{j} vs {reference}");
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), n in 2usize..6, d in 1usize..4) {
        let d = d.min(n);
        let env = random_env(seed, n, 2, d, 0.9);
        let m = build_stationary_model(&env).unwrap();
        prop_assume!(!m.c_singular() && m.c_inverse().condition_number() < 1e6);
        let theta = DVector::from_fn(d, |i, _| (seed.wrapping_add(i as u64) % 17) as f64 / 4.0 - 2.0);
        let g = m.mspbe_neg_half_gradient(&theta);
        let h = 1e-5;
        for i in 0..d {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            let fd = -0.5 * (m.mspbe(&up) - m.mspbe(&down)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g.amax()), "coordinate {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn mspbe_is_nonnegative(seed in any::<u64>(), theta in prop::collection::vec(-100.0f64..100.0, 3)) {
        let env = random_env(seed, 4, 2, 3, 0.95);
        let m = build_stationary_model(&env).unwrap();
        prop_assert!(m.mspbe(&DVector::from_vec(theta)) >= 0.0);
    }

    #[test]
    fn quasi_stationary_w_solves_normal_equation(seed in any::<u64>(), theta in prop::collection::vec(-5.0f64..5.0, 2)) {
        let env = random_env(seed, 3, 2, 2, 0.8);
        let m = build_stationary_model(&env).unwrap();
        prop_assume!(!m.c_singular());
        let theta = DVector::from_vec(theta);
        let w = m.quasi_stationary_w(&theta);
        let residual = (&m.c * &w - m.expected_td_update(&theta)).amax();
        prop_assert!(residual < 1e-9);
    }

    #[test]
    fn true_values_solve_bellman(seed in any::<u64>(), n in 2usize..6) {
        let env = random_env(seed, n, 3, 1, 0.9);
        let v = true_values(&env, &env.policies.target).unwrap();
        let backup = target_rewards(&env) + env.gamma() * target_kernel(&env) * &v;
        prop_assert!((backup - &v).amax() < 1e-10);
    }

    #[test]
    fn nonsingular_fixed_point_zeroes_expected_update(seed in any::<u64>()) {
        let env = random_env(seed, 4, 2, 2, 0.9);
        let m = build_stationary_model(&env).unwrap();
        prop_assume!(!m.a_singular() && m.a_inverse().condition_number() < 1e8);
        let fp = td_fixed_point(&m);
        prop_assert!(fp.unique);
        prop_assert!(m.expected_td_update(&fp.theta).amax() < 1e-9);
        prop_assert!(m.fixed_point_distance(&fp.theta) < 1e-9);
    }
}

/// Sample averages of `ρφ(φ − γφ')ᵀ`, `ρRφ` and `φφᵀ` along one trajectory agree with the model
/// within three batch-means standard errors.
#[test]
fn monte_carlo_estimates_agree_with_model() {
    let env = random_env(11, 4, 2, 2, 0.8);
    let m = build_stationary_model(&env).unwrap();
    let ratios = env.policies.ratio_table().unwrap();
    let na = env.mdp.num_actions();
    let samples: Vec<_> = TrajectoryStream::new(&env, 5, 0).unwrap().take(400_000).collect();
    let gamma = env.gamma();
    for i in 0..2 {
        for j in 0..2 {
            let a: Vec<f64> = samples
                .iter()
                .map(|x| {
                    let rho = ratios[x.state * na + x.action];
                    let phi = env.features.phi(x.state);
                    let next = env.features.phi(x.next_state);
                    rho * phi[i] * (phi[j] - gamma * next[j])
                })
                .collect();
            let (mean, se) = batch_mean_se(&a, 200);
            assert!((mean - m.a[(i, j)]).abs() < 3.0 * se, "A[{i},{j}]: {mean} ± {se} vs {}", m.a[(i, j)]);
            let c: Vec<f64> = samples.iter().map(|x| env.features.phi(x.state)[i] * env.features.phi(x.state)[j]).collect();
            let (mean, se) = batch_mean_se(&c, 200);
            assert!((mean - m.c[(i, j)]).abs() < 3.0 * se, "C[{i},{j}]: {mean} ± {se} vs {}", m.c[(i, j)]);
        }
        let b: Vec<f64> = samples
            .iter()
            .map(|x| ratios[x.state * na + x.action] * x.reward * env.features.phi(x.state)[i])
            .collect();
        let (mean, se) = batch_mean_se(&b, 200);
        assert!((mean - m.b[i]).abs() < 3.0 * se, "b[{i}]: {mean} ± {se} vs {}", m.b[i]);
    }
}
