//! Python bindings: environments, the exact oracle, learners, experiments and mean ODEs.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tdc_core::envfile;
use tdc_core::envs::{baird7, theta_2theta, BAIRD_GAMMA, THETA2THETA_GAMMA};
use tdc_core::harness::{run_experiment as run, EnvConfig, EnvSource, ExperimentConfig, Metric, StateWeighting};
use tdc_core::learners::{Algorithm, Learner, LearnerState, RhoMode, StepSchedule};
use tdc_core::mdp::TransitionSample;
use tdc_core::ode::{fast_field, integrate, MeanField, OdeOptions};
use tdc_core::oracle::{build_stationary_model, check_conditions, td_fixed_point, true_values};
use tdc_core::{Environment, TrajectoryStream};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn parse_algorithm(name: &str, lam: f64, rho: bool) -> PyResult<Algorithm> {
    Ok(match name {
        "td0" => Algorithm::Td0 { rho_mode: if rho { RhoMode::Importance } else { RhoMode::None } },
        "ontdc" => Algorithm::Ontdc,
        "offtdc" => Algorithm::Offtdc,
        "tdclambda" => Algorithm::TdcLambda { lambda: lam },
        "tdlambda" => Algorithm::TdLambda { lambda: lam },
        other => return Err(value_error(format!("unknown algorithm {other:?}"))),
    })
}

fn parse_metric(name: &str) -> PyResult<Metric> {
    match name {
        "rmse" => Ok(Metric::Rmse),
        "theta" => Ok(Metric::Theta),
        "mspbe" => Ok(Metric::Mspbe),
        other => Err(value_error(format!("unknown metric {other:?}"))),
    }
}

fn schedule(text: &str) -> PyResult<StepSchedule> {
    text.parse().map_err(value_error)
}

/// A finite MDP with behavior/target policies and linear features.
#[pyclass(name = "Environment", module = "tdc_py", frozen)]
struct PyEnvironment {
    inner: Environment,
    true_values: Option<Vec<f64>>,
}

#[pymethods]
impl PyEnvironment {
    /// Two states with features 1 and 2; the behavior policy stays with probability `p`.
    #[staticmethod]
    #[pyo3(signature = (p=0.5, gamma=THETA2THETA_GAMMA))]
    fn theta_2theta(p: f64, gamma: f64) -> PyResult<Self> {
        let b = theta_2theta(p, gamma).map_err(value_error)?;
        Ok(Self { inner: b.env, true_values: Some(b.true_values) })
    }

    /// Baird's 7-state star; the behavior policy takes the solid action with probability `q`.
    #[staticmethod]
    #[pyo3(signature = (q=1.0/7.0, gamma=BAIRD_GAMMA))]
    fn baird7(q: f64, gamma: f64) -> PyResult<Self> {
        let b = baird7(q, gamma).map_err(value_error)?;
        Ok(Self { inner: b.env, true_values: Some(b.true_values) })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: envfile::read(&path).map_err(value_error)?, true_values: None })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: envfile::from_str(text).map_err(value_error)?, true_values: None })
    }

    fn to_json(&self) -> String {
        envfile::to_string(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        envfile::write(&self.inner, &path).map_err(value_error)
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.mdp.num_states()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.mdp.num_actions()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features.rows()
    }

    /// `V^π` of the target policy.
    fn true_values(&self) -> PyResult<Vec<f64>> {
        if let Some(v) = &self.true_values {
            return Ok(v.clone());
        }
        let v = true_values(&self.inner, &self.inner.policies.target).map_err(value_error)?;
        Ok(vector(&v))
    }

    /// `n` behavior transitions `(s, a, r, s')` from `start`.
    #[pyo3(signature = (n, seed=0, start=0))]
    fn trajectory(&self, n: usize, seed: u64, start: usize) -> PyResult<Vec<(usize, usize, f64, usize)>> {
        let stream = TrajectoryStream::new(&self.inner, seed, start).map_err(value_error)?;
        Ok(stream.take(n).map(|x| (x.state, x.action, x.reward, x.next_state)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Environment(states={}, actions={}, dim={}, gamma={})",
            self.num_states(),
            self.num_actions(),
            self.dim(),
            self.gamma()
        )
    }
}

/// Exact stationary expectations of an environment.
#[pyclass(name = "Oracle", module = "tdc_py", frozen)]
struct PyOracle {
    env: Environment,
    model: tdc_core::StationaryModel,
}

#[pymethods]
impl PyOracle {
    #[new]
    fn new(env: &PyEnvironment) -> PyResult<Self> {
        let model = build_stationary_model(&env.inner).map_err(value_error)?;
        Ok(Self { env: env.inner.clone(), model })
    }

    #[getter]
    fn nu(&self) -> Vec<f64> {
        vector(&self.model.nu)
    }

    #[getter(A)]
    fn a(&self) -> Vec<Vec<f64>> {
        rows(&self.model.a)
    }

    #[getter]
    fn b(&self) -> Vec<f64> {
        vector(&self.model.b)
    }

    #[getter(C)]
    fn c(&self) -> Vec<Vec<f64>> {
        rows(&self.model.c)
    }

    /// `γE[ρφ'φᵀ]`
    #[getter(B)]
    fn cross(&self) -> Vec<Vec<f64>> {
        rows(&self.model.cross)
    }

    fn mspbe(&self, theta: Vec<f64>) -> PyResult<f64> {
        Ok(self.model.mspbe(&self.theta(theta)?))
    }

    /// `−½∇J(θ)`
    fn mspbe_neg_half_gradient(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(vector(&self.model.mspbe_neg_half_gradient(&self.theta(theta)?)))
    }

    fn quasi_stationary_w(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(vector(&self.model.quasi_stationary_w(&self.theta(theta)?)))
    }

    /// `(θ*, unique)`; a minimum-norm solution when `A` is singular.
    fn fixed_point(&self) -> (Vec<f64>, bool) {
        let fp = td_fixed_point(&self.model);
        (vector(&fp.theta), fp.unique)
    }

    fn fixed_point_distance(&self, theta: Vec<f64>) -> PyResult<f64> {
        Ok(self.model.fixed_point_distance(&self.theta(theta)?))
    }

    fn conditions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = check_conditions(&self.model, &self.env);
        let d = PyDict::new(py);
        d.set_item("hypotheses_hold", report.hypotheses_hold())?;
        d.set_item("lambda_bound", report.lambda_bound(self.env.gamma()))?;
        d.set_item("report", format!("{report:?}"))?;
        Ok(d)
    }

    /// Terminal `w` of the fast ODE `ẇ = (b − Aθ) − Cw` from `w0`.
    #[pyo3(signature = (theta, w0=None, dt=1e-3, horizon=1e3))]
    fn integrate_fast(&self, theta: Vec<f64>, w0: Option<Vec<f64>>, dt: f64, horizon: f64) -> PyResult<Vec<f64>> {
        let theta = self.theta(theta)?;
        let w0 = match w0 {
            Some(w) => self.theta(w)?,
            None => DVector::zeros(self.env.dim()),
        };
        let opts = Self::options(dt, horizon)?;
        Ok(vector(&integrate(|w| fast_field(&self.model, &theta, w), &w0, &opts).terminal))
    }

    /// Terminal `θ` of the slow ODE `θ̇ = (b − Aθ) − Bλ(θ)`.
    #[pyo3(signature = (theta0, dt=1e-3, horizon=1e3))]
    fn integrate_slow(&self, theta0: Vec<f64>, dt: f64, horizon: f64) -> PyResult<Vec<f64>> {
        let theta0 = self.theta(theta0)?;
        let field = MeanField::new(&self.model, &self.env).map_err(value_error)?;
        let opts = Self::options(dt, horizon)?;
        Ok(vector(&integrate(|t| field.slow(t), &theta0, &opts).terminal))
    }
}

impl PyOracle {
    fn theta(&self, v: Vec<f64>) -> PyResult<DVector<f64>> {
        if v.len() != self.env.dim() {
            return Err(value_error(format!("expected {} coordinates, got {}", self.env.dim(), v.len())));
        }
        Ok(DVector::from_vec(v))
    }

    fn options(dt: f64, horizon: f64) -> PyResult<OdeOptions> {
        if !(dt > 0.0 && horizon > 0.0) {
            return Err(value_error("dt and horizon must be positive"));
        }
        Ok(OdeOptions { dt, horizon, ..OdeOptions::default() })
    }
}

/// An online learner fed one transition at a time.
#[pyclass(name = "Learner", module = "tdc_py")]
struct PyLearner {
    inner: Learner,
    env: Environment,
}

#[pymethods]
impl PyLearner {
    /// `a` and `b` are schedules such as `"const:0.005"` or `"poly:7,100,1"`.
    #[new]
    #[pyo3(signature = (env, algorithm, a, b=None, lam=0.1, rho=true, theta0=None, w0=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        env: &PyEnvironment,
        algorithm: &str,
        a: &str,
        b: Option<&str>,
        lam: f64,
        rho: bool,
        theta0: Option<Vec<f64>>,
        w0: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let d = env.inner.dim();
        let state = LearnerState::new(theta0.unwrap_or_else(|| vec![0.0; d]), w0.unwrap_or_else(|| vec![0.0; d]))
            .map_err(value_error)?;
        let fast = b.map(schedule).transpose()?;
        let inner = Learner::new(parse_algorithm(algorithm, lam, rho)?, schedule(a)?, fast, &env.inner, state)
            .map_err(value_error)?;
        Ok(Self { inner, env: env.inner.clone() })
    }

    fn observe(&mut self, state: usize, action: usize, reward: f64, next_state: usize) -> PyResult<()> {
        let (n, m) = (self.env.mdp.num_states(), self.env.mdp.num_actions());
        if state >= n || next_state >= n || action >= m {
            return Err(value_error("state or action out of range"));
        }
        self.inner.observe(&TransitionSample { state, action, reward, next_state }, &self.env.features);
        Ok(())
    }

    /// Feeds `n` behavior transitions drawn with `seed` from `start`.
    #[pyo3(signature = (n, seed=0, start=0))]
    fn run(&mut self, py: Python<'_>, n: usize, seed: u64, start: usize) -> PyResult<()> {
        let (env, inner) = (&self.env, &mut self.inner);
        py.detach(|| {
            let mut stream = TrajectoryStream::new(env, seed, start).map_err(|e| e.to_string())?;
            for _ in 0..n {
                inner.observe(&stream.next_sample(), &env.features);
            }
            Ok::<_, String>(())
        })
        .map_err(value_error)
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.state.theta.clone()
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.inner.state.w.clone()
    }

    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.inner.state.trace.clone()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.state.step
    }
}

fn series_dict<'py>(py: Python<'py>, series: &tdc_core::AggregateSeries) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("steps", series.steps.clone())?;
    d.set_item("mean", series.mean.clone())?;
    d.set_item("variance", series.variance.clone())?;
    d.set_item("diverged", series.diverged.clone())?;
    d.set_item("diverged_runs", series.diverged_runs)?;
    Ok(d)
}

fn execute<'py>(py: Python<'py>, cfg: ExperimentConfig) -> PyResult<Bound<'py, PyDict>> {
    let series = py.detach(|| run(&cfg)).map_err(value_error)?;
    series_dict(py, &series)
}

/// Runs a seeded multi-run experiment and returns the per-checkpoint mean and variance.
///
/// `env` is `"baird7"`, `"theta2theta"` or a path to an environment JSON file.
#[pyfunction]
#[pyo3(signature = (
    env="theta2theta", algorithm="ontdc", a="const:0.075", b=Some("const:0.05"), *, p=0.5, q=1.0/7.0,
    gamma=None, lam=0.1, rho=true, runs=100, steps=10_000, seed=0, metric="rmse", nu_weighted=false,
    checkpoint_every=None, threads=None, theta0=None, on_policy=false,
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    env: &str,
    algorithm: &str,
    a: &str,
    b: Option<&str>,
    p: f64,
    q: f64,
    gamma: Option<f64>,
    lam: f64,
    rho: bool,
    runs: usize,
    steps: u64,
    seed: u64,
    metric: &str,
    nu_weighted: bool,
    checkpoint_every: Option<u64>,
    threads: Option<usize>,
    theta0: Option<Vec<f64>>,
    on_policy: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut env_cfg = match env {
        "theta2theta" => EnvConfig::theta_2theta(p),
        "baird7" => EnvConfig::baird7(q),
        path => EnvConfig { source: EnvSource::File { path: path.into() }, ..EnvConfig::baird7(q) },
    };
    env_cfg.gamma = gamma;
    env_cfg.initial_theta = theta0;
    env_cfg.on_policy = on_policy;
    let algorithm = parse_algorithm(algorithm, lam, rho)?;
    let fast = if algorithm.two_timescale() { b.map(schedule).transpose()? } else { None };
    let mut cfg = ExperimentConfig::new(env_cfg, algorithm, schedule(a)?, fast);
    cfg.num_runs = runs;
    cfg.num_steps = steps;
    cfg.seed = seed;
    cfg.metric = parse_metric(metric)?;
    cfg.weighting = if nu_weighted { StateWeighting::Stationary } else { StateWeighting::Uniform };
    cfg.checkpoint_every = checkpoint_every;
    cfg.threads = threads;
    execute(py, cfg)
}

/// Same as [`run_experiment`], configured by TOML text.
#[pyfunction]
fn run_config<'py>(py: Python<'py>, toml: &str) -> PyResult<Bound<'py, PyDict>> {
    execute(py, ExperimentConfig::from_toml(toml).map_err(value_error)?)
}

#[pymodule]
fn tdc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyOracle>()?;
    m.add_class::<PyLearner>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
