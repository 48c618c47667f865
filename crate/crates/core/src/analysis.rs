//! Speedup analysis: fit `f(t) = c1 - c2·exp(-(c3·t)^c4)` to step-vs-quality
//! points, invert it to find crossover steps, compare series, and plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation: training step and a higher-is-better metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub rss: f64,
    pub converged: bool,
    /// The data were flat; the curve is the constant `c1` and `c2` is 0.
    #[serde(default)]
    pub degenerate: bool,
}

impl RegressionFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.c1 - self.c2 * (-(self.c3 * t).powf(self.c4)).exp()
    }
}

pub fn curve(c: [f64; 4], t: f64) -> f64 {
    c[0] - c[1] * (-(c[2] * t).powf(c[3])).exp()
}

/// Restart rounds after the initial multi-start pass.
const MAX_ROUNDS: usize = 60;
const ITERS_PER_RUN: u64 = 4000;
const REL_IMPROVEMENT: f64 = 1e-12;

/// Least squares in `(c1, ln c2, ln(c3·scale), ln c4)`; `scale` is the
/// median step so the rate parameter is O(1).
struct Problem<'a> {
    points: &'a [CurvePoint],
    scale: f64,
}

impl Problem<'_> {
    fn coeffs(&self, u: &[f64]) -> [f64; 4] {
        [u[0], u[1].exp(), u[2].exp() / self.scale, u[3].exp()]
    }

    fn rss(&self, u: &[f64]) -> f64 {
        let c = self.coeffs(u);
        let r: f64 = self.points.iter().map(|p| (curve(c, p.step) - p.value).powi(2)).sum();
        if r.is_finite() {
            r
        } else {
            f64::MAX
        }
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.rss(u))
    }
}

fn simplex_around(u: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut s = vec![u.to_vec()];
    for i in 0..u.len() {
        let mut v = u.to_vec();
        v[i] += if i == 0 { step * u[0].abs().max(1e-3) } else { step };
        s.push(v);
    }
    s
}

fn nelder_mead(problem: &Problem<'_>, start: &[f64], step: f64) -> Result<(Vec<f64>, f64)> {
    let solver = NelderMead::new(simplex_around(start, step))
        .with_sd_tolerance(0.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let res = Executor::new(Problem { ..*problem }, solver)
        .configure(|s| s.max_iters(ITERS_PER_RUN))
        .run()
        .map_err(|e| Error::InvalidArgument(format!("simplex search failed: {e}")))?;
    let state = res.state();
    let best = state.get_best_param().cloned().unwrap_or_else(|| start.to_vec());
    let cost = problem.rss(&best);
    Ok((best, cost))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn check_points(points: &[CurvePoint]) -> Result<()> {
    if let Some(p) = points
        .iter()
        .find(|p| !(p.step >= 0.0 && p.step.is_finite() && p.value.is_finite()))
    {
        return Err(Error::InvalidArgument(format!(
            "invalid point ({}, {})",
            p.step, p.value
        )));
    }
    Ok(())
}

/// Multi-start Nelder–Mead fit, restarted from the incumbent until a full
/// round improves the residual sum of squares by less than 1e-12 relative.
pub fn fit_speedup_curve(points: &[CurvePoint]) -> Result<RegressionFit> {
    check_points(points)?;
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.step.total_cmp(&b.step).then(a.value.total_cmp(&b.value)));
    let mut steps: Vec<f64> = pts.iter().map(|p| p.step).collect();
    steps.dedup();
    if steps.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 distinct steps, got {}",
            steps.len()
        )));
    }
    let vmax = pts.iter().map(|p| p.value).fold(f64::MIN, f64::max);
    let vmin = pts.iter().map(|p| p.value).fold(f64::MAX, f64::min);
    let positive: Vec<f64> = steps.iter().copied().filter(|&t| t > 0.0).collect();
    let scale = median(&positive);

    if vmax - vmin <= 1e-12 * vmax.abs().max(1.0) {
        let v = pts.iter().map(|p| p.value).sum::<f64>() / pts.len() as f64;
        return Ok(RegressionFit {
            c1: v,
            c2: 0.0,
            c3: 1.0 / scale,
            c4: 1.0,
            rss: pts.iter().map(|p| (p.value - v).powi(2)).sum(),
            converged: true,
            degenerate: true,
        });
    }

    let problem = Problem { points: &pts, scale };
    let margin = 0.05 * (vmax - vmin);
    let c1 = vmax + margin;
    let base = [c1, (c1 - vmin).ln(), 0.0, 0.0];
    let mut starts = Vec::new();
    for rate in [0.0, -1.5, 1.5] {
        for shape in [0.0, -0.7, 0.7] {
            starts.push(vec![base[0], base[1], rate, shape]);
        }
    }
    let results: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|s| nelder_mead(&problem, s, 0.2))
        .collect::<Result<_>>()?;
    // Lowest RSS; ties keep the earliest start.
    let (mut best, mut best_rss) = results
        .into_iter()
        .reduce(|a, b| if b.1 < a.1 { b } else { a })
        .expect("non-empty starts");

    let mut converged = false;
    for round in 0..MAX_ROUNDS {
        let step = if round % 2 == 0 { 0.05 } else { 0.5 };
        let (u, r) = nelder_mead(&problem, &best, step)?;
        let improvement = best_rss - r;
        if r < best_rss {
            best = u;
            best_rss = r;
        }
        if best_rss == 0.0 || improvement <= REL_IMPROVEMENT * best_rss {
            converged = true;
            break;
        }
    }
    let c = problem.coeffs(&best);
    Ok(RegressionFit {
        c1: c[0],
        c2: c[1],
        c3: c[2],
        c4: c[3],
        rss: best_rss,
        converged,
        degenerate: false,
    })
}

/// Step at which the fitted curve reaches `target`; `None` when the target
/// is at or above the asymptote `c1`. Targets below `f(0)` give 0.
pub fn crossover_step(fit: &RegressionFit, target: f64) -> Option<f64> {
    if target >= fit.c1 || fit.c2 <= 0.0 {
        return if target <= fit.c1 && fit.c2 <= 0.0 {
            Some(0.0)
        } else {
            None
        };
    }
    if target <= fit.c1 - fit.c2 {
        return Some(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0 / fit.c3;
    while fit.eval(hi) < target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return None;
        }
    }
    for _ in 0..2000 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if fit.eval(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Baseline duration over the step at which the faster schedule matches it.
pub fn speedup_from_crossover(baseline_total_steps: f64, crossover: f64) -> Result<f64> {
    if !(crossover > 0.0 && baseline_total_steps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "speedup needs positive steps, got total {baseline_total_steps} and crossover {crossover}"
        )));
    }
    Ok(baseline_total_steps / crossover)
}

pub fn speedup_ratio(fit_fast: &RegressionFit, baseline_best: f64, baseline_total_steps: f64) -> Result<f64> {
    let t = crossover_step(fit_fast, baseline_best).ok_or(Error::NeverMatchesBaseline)?;
    speedup_from_crossover(baseline_total_steps, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoVerdict {
    /// A matches or exceeds B (within tolerance) at every step.
    pub pareto: bool,
    pub tolerance: f64,
    pub violations: Vec<Violation>,
}

/// Is A a Pareto improvement over B on their shared step grid?
pub fn pareto_check(a: &[CurvePoint], b: &[CurvePoint], tolerance: f64) -> Result<ParetoVerdict> {
    check_points(a)?;
    check_points(b)?;
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.step != y.step) {
        return Err(Error::InvalidArgument("series have different step grids".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tolerance} must be >= 0")));
    }
    let violations: Vec<Violation> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.value < y.value - tolerance)
        .map(|(x, y)| Violation {
            step: x.step,
            a: x.value,
            b: y.value,
        })
        .collect();
    Ok(ParetoVerdict {
        pareto: violations.is_empty(),
        tolerance,
        violations,
    })
}

/// A named series; repeated steps are replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<CurvePoint>,
}

impl Series {
    fn groups(&self) -> BTreeMap<u64, Vec<f64>> {
        let mut g: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for p in &self.points {
            g.entry(p.step.to_bits()).or_default().push(p.value);
        }
        g
    }

    /// Per-step means, sorted by step.
    pub fn means(&self) -> Vec<CurvePoint> {
        let mut out: Vec<CurvePoint> = self
            .groups()
            .into_iter()
            .map(|(s, v)| CurvePoint {
                step: f64::from_bits(s),
                value: v.iter().sum::<f64>() / v.len() as f64,
            })
            .collect();
        out.sort_by(|a, b| a.step.total_cmp(&b.step));
        out
    }

    pub fn has_replicates(&self) -> bool {
        self.groups().values().any(|v| v.len() > 1)
    }
}

/// Standard error of a difference of step means, from the replicate variance
/// pooled over every step of both series. Uses the smallest replicate count
/// per series. `None` without replicates.
pub fn pooled_standard_error(a: &Series, b: &Series) -> Option<f64> {
    let (ga, gb) = (a.groups(), b.groups());
    let (mut ss, mut dof) = (0.0, 0usize);
    for v in ga.values().chain(gb.values()).filter(|v| v.len() > 1) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        ss += v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        dof += v.len() - 1;
    }
    if dof == 0 {
        return None;
    }
    let na = ga.values().map(Vec::len).min()? as f64;
    let nb = gb.values().map(Vec::len).min()? as f64;
    Some((ss / dof as f64 * (1.0 / na + 1.0 / nb)).sqrt())
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    step: f64,
    value: f64,
    #[serde(default)]
    schedule: Option<String>,
}

/// Name given to rows without a `schedule` column.
pub const DEFAULT_SERIES: &str = "series";

/// Parse CSV with header `step,value[,schedule]`, grouping by schedule in
/// first-appearance order.
pub fn parse_series_csv(text: &str) -> Result<Vec<Series>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_err(e, 1))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["step", "value"] && cols != ["step", "value", "schedule"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header step,value[,schedule], got {}", cols.join(",")),
        });
    }
    let mut out: Vec<Series> = Vec::new();
    for (i, row) in rdr.deserialize::<SeriesRow>().enumerate() {
        let row = row.map_err(|e| csv_err(e, i + 2))?;
        let p = CurvePoint {
            step: row.step,
            value: row.value,
        };
        check_points(&[p]).map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        let name = row.schedule.unwrap_or_else(|| DEFAULT_SERIES.to_string());
        match out.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push(p),
            None => out.push(Series { name, points: vec![p] }),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

fn csv_err(e: csv::Error, line: usize) -> Error {
    Error::Parse {
        line: e.position().map_or(line, |p| p.line() as usize),
        message: e.to_string(),
    }
}

pub fn read_series(path: &Path) -> Result<Vec<Series>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series_csv(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedFit {
    pub name: String,
    pub fit: RegressionFit,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plot {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub fits: Vec<NamedFit>,
    /// Steps to mark with vertical dashed lines.
    pub markers: Vec<f64>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Render a standalone SVG 1.1 document. Output depends only on the input.
pub fn render_svg(plot: &Plot) -> Result<String> {
    if plot.series.is_empty() {
        return Err(Error::InvalidArgument("plot needs at least one series".into()));
    }
    let all: Vec<CurvePoint> = plot.series.iter().flat_map(|s| s.points.iter().copied()).collect();
    check_points(&all)?;
    if all.is_empty() {
        return Err(Error::InvalidArgument("plot series are empty".into()));
    }
    let mut x_max = all.iter().map(|p| p.step).fold(0.0, f64::max);
    x_max = plot
        .markers
        .iter()
        .copied()
        .filter(|m| m.is_finite())
        .fold(x_max, f64::max);
    if x_max <= 0.0 {
        x_max = 1.0;
    }
    let samples = 200;
    let fit_pts: Vec<Vec<(f64, f64)>> = plot
        .fits
        .iter()
        .map(|f| {
            (0..=samples)
                .map(|i| {
                    let t = x_max * i as f64 / samples as f64;
                    (t, f.fit.eval(t))
                })
                .collect()
        })
        .collect();
    let ys = all.iter().map(|p| p.value).chain(fit_pts.iter().flatten().map(|p| p.1));
    let (mut y_min, mut y_max) = ys.fold((f64::MAX, f64::MIN), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if !(y_max > y_min) {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |t: f64| LEFT + pw * t / x_max;
    let sy = |v: f64| TOP + ph * (1.0 - (v - y_min) / (y_max - y_min));

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&plot.title)
    );
    // Axes and ticks.
    let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.2}" y1="{TOP:.2}" x2="{LEFT:.2}" y2="{:.2}"/>"#,
        TOP + ph
    );
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="ticks">"#);
    for i in 0..=5 {
        let t = x_max * i as f64 / 5.0;
        let v = y_min + (y_max - y_min) * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(t),
            TOP + ph + 16.0,
            fmt_tick(t)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(v) + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&plot.y_label)
    );
    for m in plot.markers.iter().filter(|m| m.is_finite()) {
        let _ = writeln!(
            s,
            r##"<line class="crossover" x1="{:.2}" y1="{TOP:.2}" x2="{:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="4 3"/>"##,
            sx(*m),
            sx(*m),
            TOP + ph
        );
    }
    for (i, ser) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<g class="points" fill="{color}">"#);
        for p in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, sx(p.step), sy(p.value));
        }
        let _ = writeln!(s, "</g>");
    }
    for (i, (f, pts)) in plot.fits.iter().zip(&fit_pts).enumerate() {
        // Match the fit's colour to a series of the same name when there is one.
        let idx = plot
            .series
            .iter()
            .position(|x| x.name == f.name)
            .unwrap_or(plot.series.len() + i);
        let color = PALETTE[idx % PALETTE.len()];
        let mut d = String::new();
        for (k, (t, v)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, sx(*t), sy(*v));
        }
        let _ = writeln!(
            s,
            r#"<path class="fit" d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
    }
    let _ = writeln!(s, r#"<g class="legend">"#);
    let mut names: Vec<(String, usize)> = plot
        .series
        .iter()
        .enumerate()
        .map(|(i, x)| (x.name.clone(), i))
        .collect();
    for (i, f) in plot.fits.iter().enumerate() {
        if !plot.series.iter().any(|x| x.name == f.name) {
            names.push((format!("{} (fit)", f.name), plot.series.len() + i));
        }
    }
    for (row, (name, idx)) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * row as f64;
        let x = W - RIGHT + 15.0;
        let color = PALETTE[idx % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#,
            y - 9.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 15.0, escape(name));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

pub fn emit_plot(plot: &Plot, path: &Path) -> Result<()> {
    let svg = render_svg(plot)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
