use std::path::PathBuf;

use clap::Args;
use maskrate::stats::{self, GroupedSamples, TTestKind, TableOptions};

use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct CompareArgs {
    /// JSON object {task: {schedule: [values...]}}.
    samples: PathBuf,
    /// Family-wise significance level for the Hochberg correction.
    #[arg(long, default_value_t = 0.05, value_parser = super::parse_rate)]
    alpha: f64,
    /// Pooled-variance Student test instead of Welch.
    #[arg(long)]
    pooled: bool,
    /// Treat lower values as better (e.g. losses).
    #[arg(long)]
    lower_is_better: bool,
}

pub fn run(a: CompareArgs) -> CliResult<()> {
    if a.alpha == 0.0 {
        return Err(CliError::usage("--alpha must be > 0"));
    }
    let text = std::fs::read_to_string(&a.samples)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", a.samples.display())))?;
    let samples: GroupedSamples =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid samples file: {e}")))?;
    let opts = TableOptions {
        alpha: a.alpha,
        kind: if a.pooled { TTestKind::Pooled } else { TTestKind::Welch },
        higher_is_better: !a.lower_is_better,
    };
    let report = stats::parity_table(&samples, &opts)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!();
    print!("{}", stats::render_table(&samples, &report));
    Ok(())
}
