//! Reporting and curve-shape helpers for the acceptance suite.

use std::time::{Duration, Instant};

use tdc_core::AggregateSeries;

/// Result of one criterion.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Prints one line per criterion and remembers which passed.
#[derive(Default)]
pub struct Report {
    results: Vec<bool>,
}

impl Report {
    /// Runs `f`; a criterion with a budget also fails when it overruns it.
    pub fn criterion(&mut self, number: usize, title: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let in_budget = budget.is_none_or(|b| elapsed < b);
        let pass = outcome.pass && in_budget;
        let note = match budget {
            Some(b) if !in_budget => format!(", over the {:.0} s budget", b.as_secs_f64()),
            _ => String::new(),
        };
        println!(
            "{} criterion {number} ({title}): {} [{:.1} s{note}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
        self.results.push(pass);
    }

    pub fn passed(&self) -> usize {
        self.results.iter().filter(|p| **p).count()
    }

    pub fn total(&self) -> usize {
        self.results.len()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.total()
    }
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

/// Means of `blocks` consecutive equal slices of the series after its initial point.
pub fn block_means(series: &[f64], blocks: usize) -> Vec<f64> {
    let body = &series[1..];
    let size = (body.len() / blocks).max(1);
    body.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect()
}

/// The initial value followed by ten block means of the mean curve, and whether the run set
/// trends down: no divergence and every block strictly below the one before.
pub fn trends_down(series: &AggregateSeries) -> (bool, Vec<f64>) {
    let mut blocks = vec![series.mean[0]];
    blocks.extend(block_means(&series.mean, 10));
    let ok = series.diverged_runs == 0
        && blocks.iter().all(|x| x.is_finite())
        && blocks.windows(2).all(|w| w[1] < w[0]);
    (ok, blocks)
}

/// Final mean metric over all runs; any diverged run makes it infinite.
pub fn final_mean_all_runs(series: &AggregateSeries) -> f64 {
    if series.diverged_runs > 0 {
        f64::INFINITY
    } else {
        series.final_mean()
    }
}

pub fn fmt_values(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}
