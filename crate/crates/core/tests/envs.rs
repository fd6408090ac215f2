mod common;

use proptest::prelude::*;
use tdc_core::envfile;
use tdc_core::envs::{baird7, theta_2theta, BenchmarkSpec, BAIRD_GAMMA, BAIRD_HUB, BAIRD_INITIAL_THETA, THETA2THETA_GAMMA};
use tdc_core::harness::rmse;
use tdc_core::mdp::{validate, FiniteMdp, MdpError};
use tdc_core::{Policy, PolicyPair, TrajectoryStream};

use common::random_env;

#[test]
fn baird_initial_rmse() {
    let b = baird7(1.0 / 7.0, BAIRD_GAMMA).unwrap();
    // outer states: 2·1 + 1 = 3, hub: 10 + 2·1 = 12
    let expected = (198.0f64 / 7.0).sqrt();
    let got = rmse(&b.env.features, &BAIRD_INITIAL_THETA, &b.true_values, None);
    assert!((got - expected).abs() < 1e-12);
    assert_eq!(b.env.features.value(&BAIRD_INITIAL_THETA, BAIRD_HUB), 12.0);
    assert_eq!(b.env.features.value(&BAIRD_INITIAL_THETA, 0), 3.0);
}

#[test]
fn baird_ratios() {
    for q in [1.0 / 7.0, 0.01, 0.001] {
        let env = baird7(q, BAIRD_GAMMA).unwrap().env;
        let table = env.policies.ratio_table().unwrap();
        for s in 0..7 {
            assert!((table[s * 2] - 1.0 / q).abs() < 1e-9 / q);
            assert_eq!(table[s * 2 + 1], 0.0);
        }
        assert_eq!(env.policies.target.deterministic_actions(), Some(vec![0; 7]));
    }
}

#[test]
fn theta2theta_layout() {
    let b = theta_2theta(0.5, THETA2THETA_GAMMA).unwrap();
    let env = &b.env;
    assert_eq!(env.features.phi(0), &[1.0]);
    assert_eq!(env.features.phi(1), &[2.0]);
    for s in 0..2 {
        assert_eq!(env.mdp.transition_prob(s, 1, 1), 1.0);
        assert_eq!(env.mdp.transition_prob(s, 0, 0), 1.0);
    }
    assert_eq!(env.policies.target.deterministic_actions(), Some(vec![1, 1]));
    assert_eq!(b.true_values, vec![0.0, 0.0]);
}

#[test]
fn benchmark_ranges() {
    assert!(theta_2theta(0.0, 0.9).is_err());
    assert!(theta_2theta(1.0, 0.9).is_err());
    assert!(baird7(0.5, 1.0).is_err());
    let mut spec = BenchmarkSpec::baird7(0.1);
    spec.initial_theta.pop();
    assert!(spec.build().is_err());
}

#[test]
fn validation_reports_every_violation() {
    let n = 2;
    let transition = vec![0.5, 0.5, 0.7, 0.7, 1.0, 0.0, 0.0, 1.0];
    let mdp = FiniteMdp::new(n, 2, transition, vec![0.0; 8], 1.0).unwrap();
    let behavior = Policy::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
    let target = Policy::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
    let report = validate(&mdp, &PolicyPair::new(behavior, target).unwrap()).unwrap();
    assert!(!report.is_valid());
    assert!(report.has("behavior positivity"));
    assert!(report.has("discount range"));
    assert!(report.violations.len() >= 3, "{:?}", report.violations);
}

#[test]
fn shape_errors() {
    assert!(matches!(FiniteMdp::new(2, 2, vec![0.5; 7], vec![0.0; 8], 0.9), Err(MdpError::Shape { .. })));
    assert!(FiniteMdp::new(2, 1, vec![f64::NAN, 1.0, 0.5, 0.5], vec![0.0; 4], 0.9).is_err());
}

/// Baird with `q = 1/7` visits every state with probability 1/7 independently of the past,
/// so state counts follow a multinomial law.
#[test]
fn baird_visitation_chi_square() {
    let env = baird7(1.0 / 7.0, BAIRD_GAMMA).unwrap().env;
    let n = 70_000;
    let mut counts = [0usize; 7];
    for x in TrajectoryStream::new(&env, 17, BAIRD_HUB).unwrap().take(n) {
        counts[x.next_state] += 1;
    }
    let expected = n as f64 / 7.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.999 quantile of χ² with 6 degrees of freedom
    assert!(chi2 < 22.458, "χ² = {chi2}, counts {counts:?}");
}

#[test]
fn action_frequencies_follow_behavior() {
    let env = theta_2theta(0.2, THETA2THETA_GAMMA).unwrap().env;
    let n = 100_000;
    let mut stay = 0usize;
    for x in TrajectoryStream::new(&env, 3, 0).unwrap().take(n) {
        if x.state == x.next_state {
            stay += 1;
        }
    }
    // every step is an independent Bernoulli(0.2) stay
    let p = stay as f64 / n as f64;
    let se = (0.2 * 0.8 / n as f64).sqrt();
    assert!((p - 0.2).abs() < 3.3 * se, "{p}");
}

#[test]
fn streams_are_seed_deterministic() {
    let env = random_env(2, 5, 3, 2, 0.9);
    let a: Vec<_> = TrajectoryStream::new(&env, 42, 0).unwrap().take(1000).collect();
    let b: Vec<_> = TrajectoryStream::new(&env, 42, 0).unwrap().take(1000).collect();
    let c: Vec<_> = TrajectoryStream::new(&env, 43, 0).unwrap().take(1000).collect();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for w in a.windows(2) {
        assert_eq!(w[0].next_state, w[1].state);
    }
}

#[test]
fn benchmarks_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for env in [baird7(0.01, BAIRD_GAMMA).unwrap().env, theta_2theta(0.3, 0.5).unwrap().env] {
        let path = dir.path().join("env.json");
        envfile::write(&env, &path).unwrap();
        assert_eq!(envfile::read(&path).unwrap(), env);
    }
}

#[test]
fn env_file_rejects_unknown_fields() {
    let env = theta_2theta(0.5, 0.9).unwrap().env;
    let text = envfile::to_string(&env).replacen('{', "{\"extra\": 1,", 1);
    assert!(envfile::from_str(&text).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_envs_round_trip(seed in any::<u64>(), n in 1usize..6, actions in 1usize..4, d in 1usize..4, gamma in 0.0f64..1.0) {
        let env = random_env(seed, n, actions, d, gamma);
        let back = envfile::from_str(&envfile::to_string(&env)).unwrap();
        prop_assert_eq!(back, env);
    }
}
