//! Preset experiment groups reproducing the standard counterexample plots.

use std::path::{Path, PathBuf};

use super::output::{emit_csv, emit_svg, Column, Panel, PlotOptions, YScale};
use super::{run_experiment, AggregateSeries, EnvConfig, ExperimentConfig, HarnessError, Metric};
use crate::learners::{Algorithm, RhoMode, StepSchedule};

pub const FIGURES: [&str; 8] = [
    "baird-compare",
    "theta-compare",
    "theta-offon",
    "baird-offon",
    "theta-onpolicy",
    "variance",
    "traces",
    "diminishing",
];

#[derive(Debug, Clone)]
pub struct FigureSpec {
    pub name: String,
    pub panels: Vec<(String, Vec<(String, ExperimentConfig)>)>,
    pub plot: PlotOptions,
}

/// Overrides applied to every experiment of a preset.
#[derive(Debug, Clone, Copy)]
pub struct FigureScale {
    pub runs: usize,
    pub steps: Option<u64>,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for FigureScale {
    fn default() -> Self {
        Self { runs: 1000, steps: None, seed: 0, threads: None }
    }
}

fn constant(c: f64) -> StepSchedule {
    StepSchedule::Constant { c }
}

fn experiment(env: EnvConfig, algorithm: Algorithm, a: StepSchedule, b: Option<StepSchedule>, metric: Metric, steps: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(env, algorithm, a, b);
    cfg.metric = metric;
    cfg.num_steps = steps;
    cfg
}

const TD0: Algorithm = Algorithm::Td0 { rho_mode: RhoMode::Importance };

/// TD(0), OFFTDC and ONTDC with the constant steps used for each benchmark.
fn three_way(env: EnvConfig, baird: bool, steps: u64) -> Vec<(String, ExperimentConfig)> {
    let (metric, a, b) = if baird { (Metric::Rmse, 0.005, 0.05) } else { (Metric::Theta, 0.075, 0.05) };
    vec![
        ("TD(0)".into(), experiment(env.clone(), TD0, constant(0.075), None, metric, steps)),
        ("OFFTDC".into(), experiment(env.clone(), Algorithm::Offtdc, constant(a), Some(constant(b)), metric, steps)),
        ("ONTDC".into(), experiment(env, Algorithm::Ontdc, constant(a), Some(constant(b)), metric, steps)),
    ]
}

fn off_vs_on(env: EnvConfig, baird: bool, steps: u64) -> Vec<(String, ExperimentConfig)> {
    three_way(env, baird, steps).into_iter().skip(1).collect()
}

pub fn figure(name: &str, scale: &FigureScale) -> Option<FigureSpec> {
    let baird = |q: f64| EnvConfig::baird7(q);
    let theta = |p: f64| EnvConfig::theta_2theta(p);
    let s = |default: u64| scale.steps.unwrap_or(default);
    let plot = |title: &str, y_label: &str, y_scale: YScale| PlotOptions {
        title: title.into(),
        y_label: y_label.into(),
        y_scale,
        column: Column::Mean,
    };
    let (panels, plot) = match name {
        "baird-compare" => (
            vec![("Baird 7-star, q = 1/7".to_string(), three_way(baird(1.0 / 7.0), true, s(100_000)))],
            plot("TD(0), OFFTDC and ONTDC on Baird", "RMSE", YScale::Log),
        ),
        "theta-compare" => (
            vec![("theta -> 2 theta, p = 1/2".to_string(), three_way(theta(0.5), false, s(100_000)))],
            plot("TD(0), OFFTDC and ONTDC on theta -> 2 theta", "theta", YScale::Linear),
        ),
        "theta-offon" => (
            vec![
                ("p = .01".to_string(), off_vs_on(theta(0.01), false, s(10_000))),
                ("p = .001".to_string(), off_vs_on(theta(0.001), false, s(10_000))),
            ],
            plot("OFFTDC vs ONTDC on theta -> 2 theta", "theta", YScale::Linear),
        ),
        "baird-offon" => (
            vec![
                ("q = .01".to_string(), off_vs_on(baird(0.01), true, s(100_000))),
                ("q = .001".to_string(), off_vs_on(baird(0.001), true, s(100_000))),
            ],
            plot("OFFTDC vs ONTDC on Baird", "RMSE", YScale::Log),
        ),
        "theta-onpolicy" => {
            let mut env = theta(0.5);
            env.on_policy = true;
            let steps = s(2_000);
            let curves = vec![
                ("TD(0.1)".to_string(), experiment(env.clone(), Algorithm::TdLambda { lambda: 0.1 }, constant(0.075), None, Metric::Theta, steps)),
                ("TDC".to_string(), experiment(env.clone(), Algorithm::Ontdc, constant(0.075), Some(constant(0.05)), Metric::Theta, steps)),
                ("TDC(0.1)".to_string(), experiment(env, Algorithm::TdcLambda { lambda: 0.1 }, constant(0.075), Some(constant(0.05)), Metric::Theta, steps)),
            ];
            (vec![("on-policy, p = 1/2".to_string(), curves)], plot("On-policy learning on theta -> 2 theta", "theta", YScale::Linear))
        }
        "variance" => (
            vec![
                ("Baird".to_string(), vec![("ONTDC".to_string(), three_way(baird(1.0 / 7.0), true, s(100_000)).remove(2).1)]),
                ("theta -> 2 theta".to_string(), vec![("ONTDC".to_string(), three_way(theta(0.5), false, s(100_000)).remove(2).1)]),
            ],
            PlotOptions { column: Column::Variance, ..plot("Cross-run variance of ONTDC", "variance", YScale::Linear) },
        ),
        "traces" => {
            let lam = 0.1;
            let curves = |env: EnvConfig, baird: bool, steps: u64| {
                let (metric, a, b) = if baird { (Metric::Rmse, 0.005, 0.05) } else { (Metric::Theta, 0.075, 0.05) };
                vec![
                    ("TD(0.1)".to_string(), experiment(env.clone(), Algorithm::TdLambda { lambda: lam }, constant(0.075), None, metric, steps)),
                    ("TDC(0.1)".to_string(), experiment(env, Algorithm::TdcLambda { lambda: lam }, constant(a), Some(constant(b)), metric, steps)),
                ]
            };
            (
                vec![
                    ("Baird".to_string(), curves(baird(1.0 / 7.0), true, s(100_000))),
                    ("theta -> 2 theta".to_string(), curves(theta(0.5), false, s(100_000))),
                ],
                plot("TD(lambda) vs TDC(lambda), lambda = 0.1", "metric", YScale::Linear),
            )
        }
        "diminishing" => {
            let baird_cfg = experiment(
                baird(1.0 / 7.0),
                Algorithm::Ontdc,
                StepSchedule::Polynomial { c: 0.5, t0: 0.0, kappa: 1.0 },
                Some(StepSchedule::Polynomial { c: 0.125, t0: 0.0, kappa: 0.95 }),
                Metric::Rmse,
                s(100_000),
            );
            let theta_cfg = experiment(
                theta(0.5),
                Algorithm::Ontdc,
                StepSchedule::Polynomial { c: 7.0, t0: 100.0, kappa: 1.0 },
                Some(StepSchedule::Polynomial { c: 0.5, t0: 0.0, kappa: 0.95 }),
                Metric::Theta,
                s(100_000),
            );
            (
                vec![
                    ("Baird".to_string(), vec![("ONTDC".to_string(), baird_cfg)]),
                    ("theta -> 2 theta".to_string(), vec![("ONTDC".to_string(), theta_cfg)]),
                ],
                plot("ONTDC with diminishing step sizes", "metric", YScale::Linear),
            )
        }
        _ => return None,
    };
    let panels = panels
        .into_iter()
        .map(|(title, curves)| {
            let curves = curves
                .into_iter()
                .map(|(label, mut cfg)| {
                    cfg.num_runs = scale.runs;
                    cfg.seed = scale.seed;
                    cfg.threads = scale.threads;
                    (label, cfg)
                })
                .collect();
            (title, curves)
        })
        .collect();
    Some(FigureSpec { name: name.to_string(), panels, plot })
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Runs every experiment of a preset, writing one CSV per curve and one SVG.
pub fn run_figure(spec: &FigureSpec, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut panels = Vec::new();
    for (title, curves) in &spec.panels {
        let mut drawn: Vec<(String, AggregateSeries)> = Vec::new();
        for (label, cfg) in curves {
            let series = run_experiment(cfg)?;
            let path = out_dir.join(format!("{}_{}_{}.csv", spec.name, slug(title), slug(label)));
            emit_csv(&series, &path)?;
            written.push(path);
            drawn.push((label.clone(), series));
        }
        panels.push(Panel { title: title.clone(), curves: drawn });
    }
    let svg = out_dir.join(format!("{}.svg", spec.name));
    emit_svg(&panels, &spec.plot, &svg)?;
    written.push(svg);
    Ok(written)
}
