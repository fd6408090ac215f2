//! CSV and SVG writers for aggregated series.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AggregateSeries, HarnessError};

pub const CSV_HEADER: &str = "step,mean,variance,diverged";

/// Formats the series as CSV. Floats use the shortest representation that parses back exactly.
pub fn csv_string(series: &AggregateSeries) -> String {
    let mut out = String::with_capacity(32 * (series.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for k in 0..series.len() {
        let _ = writeln!(out, "{},{},{},{}", series.steps[k], series.mean[k], series.variance[k], series.diverged[k]);
    }
    out
}

pub fn emit_csv(series: &AggregateSeries, path: &Path) -> Result<(), HarnessError> {
    fs::write(path, csv_string(series)).map_err(|e| HarnessError::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<AggregateSeries, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(format!("expected header {CSV_HEADER:?}, found {other:?}")),
    }
    let mut series = AggregateSeries { steps: vec![], mean: vec![], variance: vec![], diverged: vec![], diverged_runs: 0 };
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| format!("line {}: bad {what} in {line:?}", i + 2);
        if cols.len() != 4 {
            return Err(bad("column count"));
        }
        series.steps.push(cols[0].parse().map_err(|_| bad("step"))?);
        series.mean.push(cols[1].parse().map_err(|_| bad("mean"))?);
        series.variance.push(cols[2].parse().map_err(|_| bad("variance"))?);
        series.diverged.push(cols[3].parse().map_err(|_| bad("diverged"))?);
    }
    series.diverged_runs = series.diverged.last().copied().unwrap_or(0);
    Ok(series)
}

pub fn read_csv(path: &Path) -> Result<AggregateSeries, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_csv(&text).map_err(|message| HarnessError::Parse { path: path.display().to_string(), message })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YScale {
    #[default]
    Linear,
    Log,
}

/// Which column of a series to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Column {
    #[default]
    Mean,
    Variance,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub curves: Vec<(String, AggregateSeries)>,
}

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub title: String,
    pub y_scale: YScale,
    pub column: Column,
    pub y_label: String,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 50.0;

fn column(series: &AggregateSeries, col: Column) -> &[f64] {
    match col {
        Column::Mean => &series.mean,
        Column::Variance => &series.variance,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders panels side by side, one polyline per curve.
pub fn render_svg(panels: &[Panel], opts: &PlotOptions) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let height = PANEL_H + 30.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !opts.title.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="15">{}</text>"#, width / 2.0, escape(&opts.title));
    }
    for (p, panel) in panels.iter().enumerate() {
        render_panel(&mut svg, panel, opts, p as f64 * PANEL_W, 30.0);
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_panel(svg: &mut String, panel: &Panel, opts: &PlotOptions, x0: f64, y0: f64) {
    let transform = |v: f64| match opts.y_scale {
        YScale::Linear => Some(v),
        YScale::Log if v > 0.0 => Some(v.log10()),
        YScale::Log => None,
    };
    let mut x_max = 0u64;
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, s) in &panel.curves {
        x_max = x_max.max(s.steps.last().copied().unwrap_or(0));
        for y in column(s, opts.column).iter().filter_map(|&v| transform(v)).filter(|v| v.is_finite()) {
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-300 {
        // flat data sits on the baseline
        y_hi = y_lo + 1.0;
    }
    let x_max = x_max.max(1) as f64;
    let (pw, ph) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let (left, top) = (x0 + MARGIN_L, y0 + MARGIN_T);
    let px = |x: f64| left + pw * x / x_max;
    let py = |y: f64| top + ph * (1.0 - (y - y_lo) / (y_hi - y_lo));

    let _ = writeln!(svg, r#"<g class="panel">"#);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, left + pw / 2.0, y0 + 25.0, escape(&panel.title));
    let _ = writeln!(svg, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let yv = y_lo + frac * (y_hi - y_lo);
        let label = match opts.y_scale {
            YScale::Linear => format!("{yv:.3}"),
            YScale::Log => format!("1e{yv:.1}"),
        };
        let y = py(yv);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#, left - 5.0, y + 4.0);
        let xv = frac * x_max;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(xv), top + ph + 16.0, xv.round());
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">updates</text>"#, left + pw / 2.0, top + ph + 34.0);
    if !opts.y_label.is_empty() {
        let (lx, ly) = (x0 + 14.0, top + ph / 2.0);
        let _ = writeln!(svg, r#"<text x="{lx}" y="{ly}" text-anchor="middle" transform="rotate(-90 {lx} {ly})">{}</text>"#, escape(&opts.y_label));
    }
    for (i, (label, series)) in panel.curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for (k, &v) in column(series, opts.column).iter().enumerate() {
            if let Some(y) = transform(v).filter(|y| y.is_finite()) {
                let _ = write!(points, "{:.2},{:.2} ", px(series.steps[k] as f64), py(y));
            }
        }
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.trim_end());
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, left + pw - 120.0, left + pw - 100.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, left + pw - 95.0, ly + 4.0, escape(label));
    }
    let _ = writeln!(svg, "</g>");
}

pub fn emit_svg(panels: &[Panel], opts: &PlotOptions, path: &Path) -> Result<(), HarnessError> {
    if panels.iter().all(|p| p.curves.is_empty()) {
        return Err(HarnessError::Config("nothing to plot".into()));
    }
    fs::write(path, render_svg(panels, opts)).map_err(|e| HarnessError::io(path, e))
}
