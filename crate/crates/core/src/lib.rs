//! Off-policy temporal-difference learning with linear function approximation.
//!
//! - [`mdp`]: finite MDPs, policy pairs, features and behavior trajectories
//! - [`oracle`]: exact stationary quantities, TD fixed point, MSPBE and its gradient
//! - [`learners`]: TD(0), ONTDC, OFFTDC, TDC(λ) updates and step schedules
//! - [`envs`]: the θ→2θ and Baird 7-star counterexamples
//! - [`ode`]: two-timescale mean ODEs and an RK4 integrator
//! - [`harness`]: seeded multi-run experiments, CSV and SVG output

pub mod envfile;
pub mod envs;
pub mod harness;
pub mod learners;
pub mod mdp;
pub mod ode;
pub mod oracle;

pub use envs::{baird7, theta_2theta, Benchmark, BenchmarkSpec};
pub use harness::{run_experiment, AggregateSeries, ExperimentConfig};
pub use learners::{Algorithm, Learner, LearnerState, StepSchedule};
pub use mdp::{Environment, FeatureMap, FiniteMdp, Policy, PolicyPair, TrajectoryStream, TransitionSample};
pub use oracle::{build_stationary_model, StationaryModel};
