//! Significance testing: one-sided two-sample t-tests, Hochberg step-up
//! correction, and per-task parity ("bold") tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};

/// Metric values for one schedule on one task, one value per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub schedule: String,
    pub task: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled-variance Student test.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// P(T <= t): small when x is significantly below y.
    pub p: f64,
    /// Both samples had zero variance; `p` is set by convention.
    pub degenerate: bool,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Lower-tail CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    if t.is_nan() || !(df > 0.0) {
        return Err(Error::InvalidArgument(format!("t cdf undefined for t={t}, df={df}")));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    let x = df / (df + t * t);
    let tail = 0.5 * checked_beta_reg(df / 2.0, 0.5, x).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(if t < 0.0 { tail } else { 1.0 - tail })
}

/// One-sided test of "x is worse (lower) than y".
pub fn one_sided_t(x: &[f64], y: &[f64], kind: TTestKind) -> Result<TTest> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "t-test needs >= 2 values per sample, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample value".into()));
    }
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let diff = mx - my;
    let (se2, df) = match kind {
        TTestKind::Welch => {
            let (a, b) = (vx / nx, vy / ny);
            let df = (a + b).powi(2) / (a * a / (nx - 1.0) + b * b / (ny - 1.0));
            (a + b, df)
        }
        TTestKind::Pooled => {
            let df = nx + ny - 2.0;
            let sp2 = ((nx - 1.0) * vx + (ny - 1.0) * vy) / df;
            (sp2 * (1.0 / nx + 1.0 / ny), df)
        }
    };
    if se2 == 0.0 {
        let p = if diff == 0.0 {
            0.5
        } else if diff < 0.0 {
            0.0
        } else {
            1.0
        };
        let t = if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        return Ok(TTest {
            t,
            df: nx + ny - 2.0,
            p,
            degenerate: true,
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTest {
        t,
        df,
        p: student_t_cdf(t, df)?,
        degenerate: false,
    })
}

/// Hochberg step-up: reject the `k` smallest p-values for the largest `k`
/// with `p_(k) <= alpha / (m - k + 1)`. Returns a flag per input p-value.
pub fn hochberg(pvals: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0,1]")));
    }
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("p-value {p} outside [0,1]")));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let k = (1..=m)
        .rev()
        .find(|&k| pvals[order[k - 1]] <= alpha / (m - k + 1) as f64)
        .unwrap_or(0);
    let mut reject = vec![false; m];
    for &i in &order[..k] {
        reject[i] = true;
    }
    Ok(reject)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    pub alpha: f64,
    pub kind: TTestKind,
    /// False for metrics like loss where lower is better.
    pub higher_is_better: bool,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            kind: TTestKind::Welch,
            higher_is_better: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub reject: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub best: String,
    pub best_mean: f64,
    /// Every other schedule tested against `best`.
    pub comparisons: BTreeMap<String, Comparison>,
    /// Schedules not significantly worse than `best`, including `best`.
    pub parity: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub alpha: f64,
    pub test: TTestKind,
    pub higher_is_better: bool,
    pub tasks: BTreeMap<String, TaskReport>,
}

/// `{task -> {schedule -> values}}`, the JSON input format.
pub type GroupedSamples = BTreeMap<String, BTreeMap<String, Vec<f64>>>;

pub fn group(samples: &[SampleSet]) -> Result<GroupedSamples> {
    let mut out = GroupedSamples::new();
    for s in samples {
        let prev = out
            .entry(s.task.clone())
            .or_default()
            .insert(s.schedule.clone(), s.values.clone());
        if prev.is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate samples for schedule {} on task {}",
                s.schedule, s.task
            )));
        }
    }
    Ok(out)
}

/// Per task: find the best-mean schedule, test every other schedule against
/// it, and Hochberg-correct within the task.
pub fn parity_table(samples: &GroupedSamples, opts: &TableOptions) -> Result<SignificanceReport> {
    let sign = if opts.higher_is_better { 1.0 } else { -1.0 };
    let mut tasks = BTreeMap::new();
    for (task, schedules) in samples {
        if schedules.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "task {task} has fewer than 2 schedules"
            )));
        }
        let oriented: BTreeMap<&String, Vec<f64>> = schedules
            .iter()
            .map(|(s, v)| (s, v.iter().map(|x| sign * x).collect()))
            .collect();
        // Highest oriented mean; ties go to the lexicographically first name.
        let (best, best_vals) = oriented
            .iter()
            .fold(None::<(&String, &Vec<f64>)>, |acc, (s, v)| match acc {
                Some((_, bv)) if mean(bv) >= mean(v) => acc,
                _ => Some((s, v)),
            })
            .expect("at least two schedules");
        let others: Vec<(&String, TTest)> = oriented
            .iter()
            .filter(|(s, _)| s.as_str() != best.as_str())
            .map(|(s, v)| one_sided_t(v, best_vals, opts.kind).map(|t| (*s, t)))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::InsufficientData(m) => Error::InsufficientData(format!("task {task}: {m}")),
                e => e,
            })?;
        let pvals: Vec<f64> = others.iter().map(|(_, t)| t.p).collect();
        let reject = hochberg(&pvals, opts.alpha)?;
        let mut parity = vec![(*best).clone()];
        let mut comparisons = BTreeMap::new();
        for ((s, t), r) in others.into_iter().zip(reject) {
            if !r {
                parity.push(s.clone());
            }
            comparisons.insert(
                s.clone(),
                Comparison {
                    mean: mean(&schedules[s]),
                    t: t.t,
                    df: t.df,
                    p: t.p,
                    reject: r,
                    degenerate: t.degenerate,
                },
            );
        }
        parity.sort();
        tasks.insert(
            task.clone(),
            TaskReport {
                best: (*best).clone(),
                best_mean: mean(&schedules[best]),
                comparisons,
                parity,
            },
        );
    }
    Ok(SignificanceReport {
        alpha: opts.alpha,
        test: opts.kind,
        higher_is_better: opts.higher_is_better,
        tasks,
    })
}

/// Schedules as rows, tasks as columns, means to two decimals. Entries in a
/// task's parity set are wrapped in `**`.
pub fn render_table(samples: &GroupedSamples, report: &SignificanceReport) -> String {
    let tasks: Vec<&String> = report.tasks.keys().collect();
    let mut schedules: Vec<&String> = samples.values().flat_map(|m| m.keys()).collect();
    schedules.sort();
    schedules.dedup();
    let cell = |task: &String, sched: &String| -> String {
        match samples[task].get(sched) {
            None => "-".into(),
            Some(v) => {
                let m = format!("{:.2}", mean(v));
                if report.tasks[task].parity.contains(sched) {
                    format!("**{m}**")
                } else {
                    m
                }
            }
        }
    };
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("schedule".to_string())
        .chain(tasks.iter().map(|t| t.to_string()))
        .collect()];
    for s in &schedules {
        rows.push(
            std::iter::once(s.to_string())
                .chain(tasks.iter().map(|t| cell(t, s)))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
