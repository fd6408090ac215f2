use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use tdc_core::envfile;
use tdc_core::harness::figures::{figure, run_figure, FigureScale, FIGURES};
use tdc_core::harness::output::{csv_string, emit_svg, read_csv, Column, Panel, PlotOptions, YScale};
use tdc_core::harness::{prepare, run_experiment, EnvConfig, EnvSource, ExperimentConfig, Metric, StateWeighting};
use tdc_core::learners::{Algorithm, RhoMode, StepSchedule};
use tdc_core::mdp::behavior_kernel;
use tdc_core::ode::{integrate_with, MeanField, OdeOptions};
use tdc_core::oracle::{check_conditions, td_fixed_point};

#[derive(Parser)]
#[command(name = "tdc", version, about = "Off-policy TD learning experiments with linear features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed experiment and write the aggregated CSV
    Run(RunArgs),
    /// Print the exact stationary quantities of an environment
    Oracle(OracleArgs),
    /// Integrate the fast or slow mean ODE and write the trajectory CSV
    Ode(OdeArgs),
    /// Plot CSV files, or run a preset figure
    Plot(PlotArgs),
    /// Write a benchmark environment to a JSON file
    ExportEnv(ExportArgs),
}

#[derive(Args, Clone)]
struct EnvArgs {
    /// baird7, theta2theta or file:PATH
    #[arg(long)]
    env: Option<String>,
    /// Discount factor override
    #[arg(long)]
    gamma: Option<f64>,
    /// Behavior stay probability for theta2theta
    #[arg(long)]
    p: Option<f64>,
    /// Behavior solid-action probability for baird7
    #[arg(long)]
    q: Option<f64>,
    /// Use the behavior policy as target
    #[arg(long)]
    on_policy: bool,
}

impl EnvArgs {
    /// Environment from flags, layered over `base` when given.
    fn resolve(&self, base: Option<EnvConfig>) -> Result<EnvConfig> {
        let mut cfg = match (self.env.as_deref(), base) {
            (None, Some(base)) => base,
            (None, None) | (Some("theta2theta"), _) => EnvConfig::theta_2theta(0.5),
            (Some("baird7"), _) => EnvConfig::baird7(1.0 / 7.0),
            (Some(other), _) => match other.strip_prefix("file:") {
                Some(path) => EnvConfig {
                    source: EnvSource::File { path: PathBuf::from(path) },
                    gamma: None,
                    initial_theta: None,
                    initial_w: None,
                    on_policy: false,
                },
                None => bail!("unknown environment {other:?}; expected baird7, theta2theta or file:PATH"),
            },
        };
        match &mut cfg.source {
            EnvSource::Theta2theta { p } => {
                if let Some(v) = self.p {
                    *p = v;
                }
            }
            EnvSource::Baird7 { q } => {
                if let Some(v) = self.q {
                    *q = v;
                }
            }
            EnvSource::File { .. } => {}
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        cfg.on_policy |= self.on_policy;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Td0,
    Ontdc,
    Offtdc,
    Tdclambda,
    Tdlambda,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Rmse,
    Mspbe,
    Theta,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Disable importance weighting in TD(0)
    #[arg(long)]
    no_rho: bool,
    /// const:C or poly:C,T0,KAPPA
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Weight the RMSE by the stationary distribution
    #[arg(long)]
    nu_weighted: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Record the metric every this many updates
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Comma-separated initial theta
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also draw the mean curve to this SVG
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn default_steps(env: &EnvConfig, algorithm: &Algorithm) -> (StepSchedule, Option<StepSchedule>) {
    let baird = matches!(env.source, EnvSource::Baird7 { .. });
    if algorithm.two_timescale() {
        let a = if baird { 0.005 } else { 0.075 };
        (StepSchedule::Constant { c: a }, Some(StepSchedule::Constant { c: 0.05 }))
    } else {
        (StepSchedule::Constant { c: 0.075 }, None)
    }
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let base = args.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let env = args.env.resolve(base.as_ref().map(|b| b.env.clone()))?;
    let lambda = args.lambda.unwrap_or(0.1);
    let algorithm = match args.algo {
        Some(AlgoArg::Td0) => Algorithm::Td0 { rho_mode: if args.no_rho { RhoMode::None } else { RhoMode::Importance } },
        Some(AlgoArg::Ontdc) => Algorithm::Ontdc,
        Some(AlgoArg::Offtdc) => Algorithm::Offtdc,
        Some(AlgoArg::Tdclambda) => Algorithm::TdcLambda { lambda },
        Some(AlgoArg::Tdlambda) => Algorithm::TdLambda { lambda },
        None => {
            let mut alg = base.as_ref().map_or(Algorithm::Ontdc, |b| b.algorithm);
            if let (Some(l), Algorithm::TdcLambda { lambda } | Algorithm::TdLambda { lambda }) = (args.lambda, &mut alg) {
                *lambda = l;
            }
            alg
        }
    };
    let mut cfg = match base {
        Some(mut b) => {
            b.env = env;
            if b.algorithm != algorithm {
                (b.a, b.b) = default_steps(&b.env, &algorithm);
            }
            b.algorithm = algorithm;
            b
        }
        None => {
            let (a, b) = default_steps(&env, &algorithm);
            ExperimentConfig::new(env, algorithm, a, b)
        }
    };
    if let Some(a) = &args.a {
        cfg.a = a.parse()?;
    }
    if let Some(b) = &args.b {
        cfg.b = Some(b.parse()?);
    }
    if !algorithm.two_timescale() && args.b.is_none() {
        cfg.b = None;
    }
    if let Some(r) = args.runs {
        cfg.num_runs = r;
    }
    if let Some(s) = args.steps {
        cfg.num_steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.metric {
        cfg.metric = match m {
            MetricArg::Rmse => Metric::Rmse,
            MetricArg::Mspbe => Metric::Mspbe,
            MetricArg::Theta => Metric::Theta,
        };
    }
    if args.nu_weighted {
        cfg.weighting = StateWeighting::Stationary;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if args.checkpoint_every.is_some() {
        cfg.checkpoint_every = args.checkpoint_every;
    }
    if let Some(t) = &args.theta0 {
        cfg.env.initial_theta = Some(t.clone());
    }
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    log::info!("running {} x {} steps of {}", cfg.num_runs, cfg.num_steps, cfg.algorithm.label());
    let series = run_experiment(&cfg)?;
    let csv = csv_string(&series);
    match &args.out {
        Some(path) => std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    if let Some(svg) = &args.svg {
        let panel = Panel { title: String::new(), curves: vec![(cfg.algorithm.label().to_string(), series.clone())] };
        emit_svg(&[panel], &PlotOptions::default(), svg)?;
    }
    if series.diverged_runs > 0 {
        eprintln!("{} of {} runs diverged", series.diverged_runs, cfg.num_runs);
    }
    Ok(())
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Evaluate J and its gradient at this comma-separated theta
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_mat(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m.row_iter().map(|r| fmt_vec(&r.transpose())).collect();
    format!("[{}]", rows.join(", "))
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let prepared = prepare(&args.env.resolve(None)?)?;
    let (env, model) = (&prepared.env, &prepared.model);
    let fp = td_fixed_point(model);
    let report = check_conditions(model, env);
    println!("gamma = {}", env.gamma());
    println!("behavior_kernel = {}", fmt_mat(&behavior_kernel(&env.mdp, &env.policies)));
    println!("nu = {}", fmt_vec(&model.nu));
    println!("A = {}", fmt_mat(&model.a));
    println!("b = {}", fmt_vec(&model.b));
    println!("C = {}", fmt_mat(&model.c));
    println!("B = {}", fmt_mat(&model.cross));
    println!("theta_star = {}", fmt_vec(&fp.theta));
    println!("theta_star_unique = {}", fp.unique);
    println!("true_values = {}", fmt_vec(&DVector::from_vec(prepared.true_values.clone())));
    println!("[conditions]");
    println!("irreducible = {}", report.irreducible);
    println!("behavior_positive = {}", report.behavior_positive);
    println!("singular_A = {}", report.singular_a);
    println!("singular_C = {}", report.singular_c);
    println!("cond_A = {}", report.cond_a);
    println!("cond_C = {}", report.cond_c);
    println!("ratio_bound_L = {}", report.ratio_bound_l);
    println!("feature_bound_M = {}", report.feature_bound_m);
    println!("lambda_bound = {}", report.lambda_bound(env.gamma()));
    println!("hypotheses_hold = {}", report.hypotheses_hold());
    if let Some(theta) = args.theta {
        if theta.len() != model.dim() {
            bail!("--theta needs {} values", model.dim());
        }
        let theta = DVector::from_vec(theta);
        println!("[at_theta]");
        println!("theta = {}", fmt_vec(&theta));
        println!("mspbe = {}", model.mspbe(&theta));
        println!("neg_half_gradient = {}", fmt_vec(&model.mspbe_neg_half_gradient(&theta)));
        println!("quasi_stationary_w = {}", fmt_vec(&model.quasi_stationary_w(&theta)));
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Fast,
    Slow,
}

#[derive(Args)]
struct OdeArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, value_enum, default_value = "slow")]
    which: Which,
    /// Frozen theta (fast) or initial theta (slow); defaults to the benchmark's initial theta
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Initial w for the fast ODE (defaults to zero)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    w0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1e3)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 1000)]
    record_every: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

type ScalarFn<'a> = Box<dyn Fn(&DVector<f64>) -> f64 + 'a>;

fn cmd_ode(args: OdeArgs) -> Result<()> {
    let prepared = prepare(&args.env.resolve(None)?)?;
    let (env, model) = (&prepared.env, &prepared.model);
    let d = env.dim();
    let theta = DVector::from_vec(args.theta.clone().unwrap_or_else(|| prepared.initial.theta.clone()));
    if theta.len() != d {
        bail!("--theta needs {d} values");
    }
    let fields = MeanField::new(model, env)?;
    let opts = OdeOptions { dt: args.dt, horizon: args.horizon, tolerance: args.tolerance, record_every: args.record_every };
    if opts.dt <= 0.0 || opts.horizon <= 0.0 {
        bail!("dt and horizon must be positive");
    }
    let (run, last_column, value): (_, &str, ScalarFn<'_>) = match args.which {
        Which::Fast => {
            let w0 = DVector::from_vec(args.w0.clone().unwrap_or_else(|| vec![0.0; d]));
            if w0.len() != d {
                bail!("--w0 needs {d} values");
            }
            let g = model.expected_td_update(&theta);
            let lyapunov = move |w: &DVector<f64>| 0.5 * (&model.c * w - &g).norm_squared();
            let run = integrate_with(|w| fields.fast(&theta, w), &w0, &opts, |_, _| {});
            (run, "lyapunov", Box::new(lyapunov))
        }
        Which::Slow => {
            let run = integrate_with(|t| fields.slow(t), &theta, &opts, |_, _| {});
            (run, "J", Box::new(|t: &DVector<f64>| model.mspbe(t)))
        }
    };
    let mut out = String::from("time");
    for i in 0..d {
        out.push_str(&format!(",x{i}"));
    }
    out.push_str(&format!(",residual,{last_column}\n"));
    for (t, x) in &run.trajectory {
        let residual = match args.which {
            Which::Fast => fields.fast(&theta, x).norm(),
            Which::Slow => fields.slow(x).norm(),
        };
        out.push_str(&t.to_string());
        for v in x.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{residual},{}\n", value(x)));
    }
    match &args.out {
        Some(path) => std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{out}"),
    }
    eprintln!(
        "terminal residual {:e}, converged = {}, diverged = {}",
        run.residual, run.converged, run.diverged
    );
    Ok(())
}

#[derive(Args)]
struct PlotArgs {
    /// LABEL=PATH of a CSV written by `run`; repeatable
    #[arg(long)]
    input: Vec<String>,
    /// Preset figure to run and plot instead of reading CSVs
    #[arg(long)]
    figure: Option<String>,
    /// Output SVG for --input, or directory for --figure
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    log: bool,
    /// Plot the variance column instead of the mean
    #[arg(long)]
    variance: bool,
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    if let Some(name) = &args.figure {
        let scale = FigureScale { runs: args.runs, steps: args.steps, seed: args.seed, threads: args.threads };
        let spec = figure(name, &scale).ok_or_else(|| anyhow!("unknown figure {name:?}; known: {}", FIGURES.join(", ")))?;
        for path in run_figure(&spec, &args.out)? {
            println!("{}", path.display());
        }
        return Ok(());
    }
    if args.input.is_empty() {
        bail!("give --input LABEL=PATH at least once, or --figure NAME");
    }
    let mut curves = Vec::new();
    for item in &args.input {
        let (label, path) = item.split_once('=').ok_or_else(|| anyhow!("expected LABEL=PATH, got {item:?}"))?;
        curves.push((label.to_string(), read_csv(path.as_ref())?));
    }
    let opts = PlotOptions {
        title: args.title.unwrap_or_default(),
        y_scale: if args.log { YScale::Log } else { YScale::Linear },
        column: if args.variance { Column::Variance } else { Column::Mean },
        y_label: String::new(),
    };
    emit_svg(&[Panel { title: String::new(), curves }], &opts, &args.out)?;
    Ok(())
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let prepared = prepare(&args.env.resolve(None)?)?;
    envfile::write(&prepared.env, &args.out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Ode(a) => cmd_ode(a),
        Command::Plot(a) => cmd_plot(a),
        Command::ExportEnv(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
