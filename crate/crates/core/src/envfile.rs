//! JSON environment files.
//!
//! ```json
//! {
//!   "num_states": 2,
//!   "num_actions": 2,
//!   "transition": [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]],
//!   "reward":     [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]],
//!   "discount": 0.9,
//!   "behavior_policy": [[0.5, 0.5], [0.5, 0.5]],
//!   "target_policy":   [[0.0, 1.0], [0.0, 1.0]],
//!   "features": [[1.0], [2.0]]
//! }
//! ```
//!
//! `transition[s][a][s']` is `p(s'|s,a)`, `reward[s][a][s']` is `r(s,a,s')`,
//! policies are indexed `[s][a]` and `features[s]` is `φ(s)`. Numbers are
//! written in shortest round-trip form, so parsing a written file gives back
//! the identical environment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Environment, FeatureMap, FiniteMdp, MdpError, Policy, PolicyPair};

#[derive(Debug, Error)]
pub enum EnvFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed environment document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvDocument {
    num_states: usize,
    num_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<f64>>>,
    discount: f64,
    behavior_policy: Vec<Vec<f64>>,
    target_policy: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
}

fn flatten3(name: &str, t: &[Vec<Vec<f64>>], n: usize, m: usize) -> Result<Vec<f64>, EnvFileError> {
    let ok = t.len() == n && t.iter().all(|r| r.len() == m && r.iter().all(|x| x.len() == n));
    if !ok {
        return Err(EnvFileError::Shape(format!("{name} must be {n} x {m} x {n}")));
    }
    Ok(t.iter().flatten().flatten().copied().collect())
}

fn nest3(flat: &[f64], n: usize, m: usize) -> Vec<Vec<Vec<f64>>> {
    flat.chunks(m * n).map(|sa| sa.chunks(n).map(<[f64]>::to_vec).collect()).collect()
}

pub fn to_string(env: &Environment) -> String {
    let (n, m) = (env.mdp.num_states(), env.mdp.num_actions());
    let doc = EnvDocument {
        num_states: n,
        num_actions: m,
        transition: nest3(env.mdp.transition_tensor(), n, m),
        reward: nest3(env.mdp.reward_tensor(), n, m),
        discount: env.mdp.discount(),
        behavior_policy: env.policies.behavior.rows(),
        target_policy: env.policies.target.rows(),
        features: env.features.rows(),
    };
    serde_json::to_string_pretty(&doc).expect("environment document serializes")
}

pub fn from_str(text: &str) -> Result<Environment, EnvFileError> {
    let doc: EnvDocument = serde_json::from_str(text)?;
    let (n, m) = (doc.num_states, doc.num_actions);
    let transition = flatten3("transition", &doc.transition, n, m)?;
    let reward = flatten3("reward", &doc.reward, n, m)?;
    let mdp = FiniteMdp::new(n, m, transition, reward, doc.discount)?;
    let policies = PolicyPair::new(Policy::from_rows(&doc.behavior_policy)?, Policy::from_rows(&doc.target_policy)?)?;
    let features = FeatureMap::from_rows(&doc.features)?;
    Ok(Environment::new(mdp, policies, features)?)
}

pub fn read(path: &Path) -> Result<Environment, EnvFileError> {
    let text = fs::read_to_string(path).map_err(|source| EnvFileError::Io { path: path.display().to_string(), source })?;
    from_str(&text)
}

pub fn write(env: &Environment, path: &Path) -> Result<(), EnvFileError> {
    fs::write(path, to_string(env)).map_err(|source| EnvFileError::Io { path: path.display().to_string(), source })
}
