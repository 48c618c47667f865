use std::path::PathBuf;

use clap::Args;
use maskrate::model::{self, GradCheckConfig};
use maskrate::ModelConfig;

use super::print_json;
use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct GradcheckArgs {
    /// ModelConfig JSON; the built-in tiny config when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    coords: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(a: GradcheckArgs) -> CliResult<()> {
    let model: ModelConfig = match &a.model {
        None => ModelConfig::tiny(),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid model config: {e}")))?
        }
    };
    model
        .validate()
        .map_err(|e| CliError::usage(format!("invalid model config: {e}")))?;
    if !(a.h > 0.0 && a.tol > 0.0) {
        return Err(CliError::usage("--h and --tol must be positive"));
    }
    let report = model::grad_check(&GradCheckConfig {
        model,
        seed: a.seed,
        n_coords: a.coords,
        h: a.h,
        tol: a.tol,
        ..GradCheckConfig::default()
    })?;
    print_json(&report)?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {:.3e} > {:.1e}",
            report.max_rel_error, report.tol
        )))
    }
}
