//! Central finite-difference check of the analytic gradients.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::forward::{backward, forward, mlm_loss, rts_loss, Heads, Targets};
use super::params::{ModelConfig, ModelParams, ParamClass};
use crate::data::{Batch, CLS, NUM_SPECIALS, SEP};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Gradients below this magnitude are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub n_coords: usize,
    pub h: f64,
    pub tol: f64,
    pub heads: Heads,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            seed: 0,
            n_coords: 200,
            h: 1e-4,
            tol: 1e-5,
            heads: Heads::BOTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCoordinate {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub n_coords: usize,
    pub h: f64,
    pub tol: f64,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
    pub classes_covered: Vec<ParamClass>,
    /// Rounding error `eps * |f| / h` alone would exceed `tol`.
    pub step_size_underflow: bool,
    pub passed: bool,
    pub warnings: Vec<String>,
}

/// A random batch with MLM and RTS targets on every regular position.
pub(crate) fn probe_case(config: &ModelConfig, seed: u64) -> Result<(Batch, Vec<Targets>, Vec<Targets>)> {
    if config.vocab_size <= NUM_SPECIALS as usize || config.max_seq_len < 3 {
        return Err(Error::InvalidModelConfig(
            "gradient check needs regular tokens and max_seq_len >= 3".into(),
        ));
    }
    let mut rng = seed::rng_for(seed, Stream::Corruption, &[u64::MAX]);
    let lens = [config.max_seq_len, (config.max_seq_len - 1).max(3)];
    let rows: Vec<Vec<u32>> = lens
        .iter()
        .map(|&len| {
            let mut r = vec![CLS];
            r.extend((0..len - 2).map(|_| rng.random_range(NUM_SPECIALS..config.vocab_size as u32)));
            r.push(SEP);
            r
        })
        .collect();
    let batch = Batch::collate(rows.iter().map(Vec::as_slice));
    let mut mlm = Vec::new();
    let mut rts = Vec::new();
    for r in &rows {
        let positions: Vec<usize> = (1..r.len() - 1).collect();
        mlm.push(Targets {
            labels: positions
                .iter()
                .map(|_| rng.random_range(NUM_SPECIALS..config.vocab_size as u32))
                .collect(),
            positions: positions.clone(),
        });
        rts.push(Targets {
            labels: positions.iter().map(|_| rng.random_range(0..2)).collect(),
            positions,
        });
    }
    Ok((batch, mlm, rts))
}

/// Parameters far from initialization so every path carries signal.
pub(crate) fn probe_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::init(config)?;
    let mut rng = seed::rng_for(seed, Stream::Init, &[1]);
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    for t in p.tensors_mut() {
        for x in &mut t.data {
            *x += noise.sample(&mut rng);
        }
    }
    Ok(p)
}

fn loss_of(p: &ModelParams, batch: &Batch, mlm: &[Targets], rts: &[Targets], heads: Heads) -> Result<f64> {
    let out = forward(p, batch, heads)?;
    let mut l = 0.0;
    if heads.mlm {
        l += mlm_loss(&out, mlm)?;
    }
    if heads.rts {
        l += rts_loss(&out, rts)?;
    }
    Ok(l)
}

/// Compare analytic gradients with central differences on `n_coords`
/// coordinates spread round-robin over every tensor.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.model.validate()?;
    let mut warnings = Vec::new();
    let (batch, mlm, rts) = probe_case(&cfg.model, cfg.seed)?;
    let mut p = probe_params(&cfg.model, cfg.seed)?;

    let (f0, grads) = if cfg.heads.mlm && cfg.heads.rts {
        let (a, mut ga) = backward(&p, &batch, &mlm, Heads::MLM)?;
        let (b, gb) = backward(&p, &batch, &rts, Heads::RTS)?;
        ga.add_scaled(&gb, 1.0);
        (a + b, ga)
    } else if cfg.heads.mlm {
        backward(&p, &batch, &mlm, Heads::MLM)?
    } else {
        backward(&p, &batch, &rts, Heads::RTS)?
    };

    let step_size_underflow = f64::EPSILON * f0.abs().max(1.0) / cfg.h > cfg.tol;
    if step_size_underflow {
        warnings.push(format!(
            "step size h={} underflows: rounding error ~{:.1e} exceeds tol",
            cfg.h,
            f64::EPSILON * f0.abs().max(1.0) / cfg.h
        ));
    }
    if cfg.n_coords == 0 {
        warnings.push("no coordinates checked; pass is vacuous".into());
    }

    let layout = p.layout();
    let live: Vec<usize> = (0..layout.len()).filter(|&i| !p.tensors()[i].is_empty()).collect();
    let mut rng = seed::rng_for(cfg.seed, Stream::Init, &[2]);
    let mut max_rel: f64 = 0.0;
    let mut worst = None;
    let mut classes = Vec::new();
    let grad_tensors: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.clone()).collect();

    for c in 0..cfg.n_coords {
        let ti = live[c % live.len()];
        let n = p.tensors()[ti].len();
        let idx = rng.random_range(0..n);
        let orig = p.tensors()[ti].data[idx];
        p.tensors_mut()[ti].data[idx] = orig + cfg.h;
        let fp = loss_of(&p, &batch, &mlm, &rts, cfg.heads)?;
        p.tensors_mut()[ti].data[idx] = orig - cfg.h;
        let fm = loss_of(&p, &batch, &mlm, &rts, cfg.heads)?;
        p.tensors_mut()[ti].data[idx] = orig;

        let numeric = (fp - fm) / (2.0 * cfg.h);
        let analytic = grad_tensors[ti][idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if !classes.contains(&layout[ti].class) {
            classes.push(layout[ti].class);
        }
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some(WorstCoordinate {
                tensor: layout[ti].name.clone(),
                index: idx,
                analytic,
                numeric,
            });
        }
    }
    classes.sort();

    Ok(GradCheckReport {
        n_coords: cfg.n_coords,
        h: cfg.h,
        tol: cfg.tol,
        max_rel_error: max_rel,
        worst,
        classes_covered: classes,
        step_size_underflow,
        passed: max_rel < cfg.tol && !step_size_underflow,
        warnings,
    })
}
