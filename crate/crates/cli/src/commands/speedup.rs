use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use maskrate::analysis::{self, NamedFit, ParetoVerdict, Plot, RegressionFit, Series};
use serde::Serialize;

use super::print_json;
use crate::error::{CliError, CliResult, Context};

#[derive(Args)]
pub struct SpeedupArgs {
    /// CSV files with header step,value[,schedule]; higher values are better.
    #[arg(required = true)]
    series: Vec<PathBuf>,
    /// Schedule every other series is compared against.
    #[arg(long)]
    baseline: String,
    /// Baseline training length; defaults to its last evaluated step.
    #[arg(long)]
    total_steps: Option<f64>,
    /// Pareto tolerance; defaults to one pooled standard error when the
    /// series have replicate values at a step, else 0.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Write an SVG of points and fitted curves.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Serialize)]
struct Comparison {
    /// Step where the fitted curve reaches the baseline's best value.
    crossover_step: Option<f64>,
    speedup: Option<f64>,
    /// Set when the baseline's best is never reached.
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    /// Only when both series share a step grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pareto: Option<ParetoVerdict>,
}

#[derive(Serialize)]
struct Report {
    baseline: String,
    baseline_best: f64,
    baseline_total_steps: f64,
    fits: BTreeMap<String, RegressionFit>,
    comparisons: BTreeMap<String, Comparison>,
}

pub fn run(a: SpeedupArgs) -> CliResult<()> {
    let mut all: Vec<Series> = Vec::new();
    for p in &a.series {
        for s in analysis::read_series(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))? {
            match all.iter_mut().find(|x| x.name == s.name) {
                Some(x) => x.points.extend(s.points),
                None => all.push(s),
            }
        }
    }
    let base = all
        .iter()
        .find(|s| s.name == a.baseline)
        .ok_or_else(|| CliError::usage(format!("baseline series {:?} not found", a.baseline)))?;
    let base_means = base.means();
    let baseline_best = base_means.iter().map(|p| p.value).fold(f64::MIN, f64::max);
    let baseline_total_steps = a
        .total_steps
        .unwrap_or_else(|| base_means.last().map_or(0.0, |p| p.step));

    let mut fits = BTreeMap::new();
    for s in &all {
        let fit = analysis::fit_speedup_curve(&s.means()).context(format!("cannot fit series {}", s.name))?;
        if !fit.converged {
            eprintln!("warning: fit for {} did not converge", s.name);
        }
        fits.insert(s.name.clone(), fit);
    }

    let mut comparisons = BTreeMap::new();
    for s in all.iter().filter(|s| s.name != a.baseline) {
        let fit = &fits[&s.name];
        let crossover = analysis::crossover_step(fit, baseline_best);
        let (speedup, note) = match crossover {
            Some(t) if t > 0.0 => (Some(analysis::speedup_from_crossover(baseline_total_steps, t)?), None),
            Some(_) => (None, Some("matches the baseline at step 0".to_string())),
            None => (None, Some(maskrate::Error::NeverMatchesBaseline.to_string())),
        };
        let means = s.means();
        let same_grid = means.len() == base_means.len() && means.iter().zip(&base_means).all(|(x, y)| x.step == y.step);
        let pareto = if same_grid {
            let tol = a
                .tolerance
                .or_else(|| analysis::pooled_standard_error(s, base))
                .unwrap_or(0.0);
            Some(analysis::pareto_check(&means, &base_means, tol)?)
        } else {
            None
        };
        comparisons.insert(
            s.name.clone(),
            Comparison {
                crossover_step: crossover,
                speedup,
                note,
                pareto,
            },
        );
    }

    if let Some(path) = &a.plot {
        let markers: Vec<f64> = comparisons.values().filter_map(|c| c.crossover_step).collect();
        let plot = Plot {
            title: format!("speedup vs {}", a.baseline),
            y_label: "value".into(),
            fits: all
                .iter()
                .map(|s| NamedFit {
                    name: s.name.clone(),
                    fit: fits[&s.name],
                })
                .collect(),
            series: all.clone(),
            markers,
        };
        analysis::emit_plot(&plot, path)?;
    }

    print_json(&Report {
        baseline: a.baseline,
        baseline_best,
        baseline_total_steps,
        fits,
        comparisons,
    })
}
