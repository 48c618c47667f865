//! The pretraining loop: scheduled corruption, AdamW, warmup + linear LR decay.
//!
//! All randomness is derived from `(seed, step, row)` counters, so a run
//! resumed from a step-`k` checkpoint replays steps `k..T` exactly.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{self, CorruptionConfig, MaskOutcome, Objective};
use crate::data::{Batch, BatchPlan, TokenSequence};
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalConfig};
use crate::model::{self, Gradients, Heads, ModelConfig, ModelParams, Targets};
use crate::schedule::ScheduleSpec;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    /// Canonical schedule name, e.g. `linear-0.3-0.15`.
    pub schedule: String,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default = "defaults::peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "defaults::final_lr")]
    pub final_lr: f64,
    #[serde(default = "defaults::warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate every this many steps; 0 disables periodic evaluation.
    #[serde(default)]
    pub eval_every: u64,
    /// Checkpoint every this many steps; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Global gradient-norm clip. Off unless set.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

mod defaults {
    pub fn peak_lr() -> f64 {
        5e-4
    }
    pub fn final_lr() -> f64 {
        1e-5
    }
    pub fn warmup_fraction() -> f64 {
        0.06
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.98
    }
    pub fn eps() -> f64 {
        1e-6
    }
    pub fn weight_decay() -> f64 {
        1e-5
    }
}

impl TrainConfig {
    /// Optimizer defaults: AdamW(0.9, 0.98, 1e-6), decay 1e-5, LR 5e-4 → 1e-5 after 6% warmup.
    pub fn new(total_steps: u64, batch_size: usize, schedule: impl Into<String>) -> Self {
        Self {
            total_steps,
            batch_size,
            schedule: schedule.into(),
            corruption: CorruptionConfig::default(),
            peak_lr: defaults::peak_lr(),
            final_lr: defaults::final_lr(),
            warmup_fraction: defaults::warmup_fraction(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::eps(),
            weight_decay: defaults::weight_decay(),
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            grad_clip: None,
        }
    }

    /// The parsed schedule. A zero-step run still needs a valid schedule, so
    /// it is parsed over a one-step horizon.
    pub fn schedule_spec(&self) -> Result<ScheduleSpec> {
        ScheduleSpec::parse(&self.schedule, self.total_steps.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.schedule_spec()?;
        self.corruption.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction {} outside (0,1)", self.warmup_fraction));
        }
        if !(self.final_lr >= 0.0 && self.final_lr <= self.peak_lr) {
            return bad("learning rates must satisfy 0 <= final_lr <= peak_lr".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0,1)".into());
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be > 0 and weight_decay >= 0".into());
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be > 0".into());
        }
        Ok(())
    }

    fn heads(&self) -> Heads {
        match self.corruption.objective {
            Objective::Mlm => Heads::MLM,
            Objective::Rts => Heads::RTS,
        }
    }
}

/// Linear warmup from 0 to `peak_lr` over the first `warmup_fraction` of
/// training, then linear decay to `final_lr` at `total_steps`.
pub fn lr_at(cfg: &TrainConfig, t: u64) -> Result<f64> {
    if t > cfg.total_steps {
        return Err(Error::StepOutOfRange {
            step: t,
            total: cfg.total_steps,
        });
    }
    if cfg.total_steps == 0 {
        return Ok(0.0);
    }
    let total = cfg.total_steps as f64;
    let warm = cfg.warmup_fraction * total;
    let t = t as f64;
    Ok(if t <= warm {
        cfg.peak_lr * t / warm
    } else {
        cfg.peak_lr + (cfg.final_lr - cfg.peak_lr) * (t - warm) / (total - warm)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// First and second moments, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Gradients,
    pub v: Gradients,
    /// Updates applied so far.
    pub step: u64,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected AdamW update with decoupled weight decay.
/// Layer-norm scale and shift are not decayed.
pub fn adamw_step(params: &mut ModelParams, grads: &Gradients, opt: &mut OptState, lr: f64, hp: &AdamW) -> Result<()> {
    if grads.layout() != params.layout() {
        return Err(Error::ShapeMismatch("gradient layout differs from parameters".into()));
    }
    if !grads.all_finite() {
        return Err(Error::Diverged {
            step: opt.step,
            reason: "non-finite gradient".into(),
        });
    }
    opt.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(opt.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(opt.step as i32);
    let layout = params.layout();
    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = opt.m.tensors_mut();
    let vs = opt.v.tensors_mut();
    for ((((info, p), g), m), v) in layout.iter().zip(ps).zip(gs).zip(ms).zip(vs) {
        let decay = if info.class.decays() { hp.weight_decay } else { 0.0 };
        for k in 0..p.data.len() {
            let gk = g.data[k];
            m.data[k] = hp.beta1 * m.data[k] + (1.0 - hp.beta1) * gk;
            v.data[k] = hp.beta2 * v.data[k] + (1.0 - hp.beta2) * gk * gk;
            let m_hat = m.data[k] / bc1;
            let v_hat = v.data[k] / bc2;
            p.data[k] -= lr * (m_hat / (v_hat.sqrt() + hp.eps) + decay * p.data[k]);
        }
    }
    Ok(())
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: u64,
    pub rate: f64,
    pub lr: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_loss: Option<f64>,
    /// Wall-clock time; only recorded when explicitly enabled since it breaks
    /// byte-level reproducibility of the metrics file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
    /// Maskable tokens in the batch.
    pub maskable: usize,
    /// Corrupted positions in the batch.
    pub masked: usize,
    /// Positions the loss was computed over.
    pub loss_tokens: usize,
    /// Upper bound on `loss_tokens` in subset-loss mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_cap: Option<usize>,
}

/// Append-only step log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<StepRecord>,
}

impl RunMetrics {
    /// JSON Lines, one record per step.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records: Vec<StepRecord> = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: StepRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if records.last().is_some_and(|p| p.step >= r.step) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "steps must be strictly increasing".into(),
                });
            }
            records.push(r);
        }
        Ok(Self { records })
    }
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt: OptState,
    /// Number of completed steps.
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub state: TrainState,
    /// Evaluation of the parameters the run started from.
    pub start_eval_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
}

/// A dataset to evaluate on and how.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub dataset: &'a [TokenSequence],
    pub config: &'a EvalConfig,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    schedule: ScheduleSpec,
    dataset: &'a [TokenSequence],
    eval: Option<EvalSet<'a>>,
    state: TrainState,
    plan: Option<(u64, BatchPlan)>,
    record_wall_time: bool,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters from `model.init_seed`.
    pub fn new(
        cfg: TrainConfig,
        model: &ModelConfig,
        dataset: &'a [TokenSequence],
        eval: Option<EvalSet<'a>>,
    ) -> Result<Self> {
        let params = ModelParams::init(model)?;
        let opt = OptState::new(&params);
        Self::from_state(cfg, TrainState { params, opt, step: 0 }, dataset, eval)
    }

    pub fn from_state(
        cfg: TrainConfig,
        state: TrainState,
        dataset: &'a [TokenSequence],
        eval: Option<EvalSet<'a>>,
    ) -> Result<Self> {
        cfg.validate()?;
        state.params.config.validate()?;
        if state.step > cfg.total_steps {
            return Err(Error::CheckpointMismatch(format!(
                "state is at step {} beyond total_steps {}",
                state.step, cfg.total_steps
            )));
        }
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let max_len = state.params.config.max_seq_len;
        for (i, s) in dataset.iter().enumerate() {
            if s.len() > max_len {
                return Err(Error::SequenceTooLong {
                    len: s.len(),
                    max: max_len,
                });
            }
            if s.maskable().is_empty() {
                return Err(Error::InvalidArgument(format!("sequence {i} has no maskable tokens")));
            }
        }
        if let Some(e) = &eval {
            e.config.validate()?;
        }
        Ok(Self {
            schedule: cfg.schedule_spec()?,
            cfg,
            dataset,
            eval,
            state,
            plan: None,
            record_wall_time: false,
        })
    }

    pub fn record_wall_time(mut self, on: bool) -> Self {
        self.record_wall_time = on;
        self
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.cfg.total_steps
    }

    pub fn evaluate(&self) -> Result<Option<f64>> {
        self.eval
            .map(|e| evaluate::eval_mlm(&self.state.params, e.dataset, e.config))
            .transpose()
    }

    /// Dataset indices of the rows used at step `t`. The dataset is cycled
    /// with a fresh shuffle each epoch.
    pub fn batch_indices(&mut self, t: u64) -> Result<Vec<usize>> {
        let per_epoch = self.dataset.len().div_ceil(self.cfg.batch_size) as u64;
        let epoch = t / per_epoch;
        if self.plan.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let plan = BatchPlan::for_epoch(self.dataset.len(), self.cfg.batch_size, self.cfg.seed, epoch)?;
            self.plan = Some((epoch, plan));
        }
        let (_, plan) = self.plan.as_ref().expect("plan set above");
        Ok(plan.batch_indices((t % per_epoch) as usize).to_vec())
    }

    /// The corrupted rows for step `t` at masking rate `rate`.
    pub fn corrupt_step(&mut self, t: u64, rate: f64) -> Result<Vec<MaskOutcome>> {
        let idx = self.batch_indices(t)?;
        let vocab = self.state.params.config.vocab_size;
        let seed = self.cfg.seed;
        let subset = self.cfg.corruption.subset_loss_fraction;
        // Subset selection happens once per batch, below.
        let ccfg = CorruptionConfig {
            subset_loss_fraction: None,
            ..self.cfg.corruption.clone()
        };
        let dataset = self.dataset;
        let mut outcomes = idx
            .par_iter()
            .enumerate()
            .map(|(r, &i)| {
                let mut rng = seed::rng_for(seed, Stream::Corruption, &[t, r as u64]);
                corruption::corrupt(&dataset[i], rate, vocab, &ccfg, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(frac) = subset {
            let mut rng = seed::rng_for(seed, Stream::Corruption, &[t, u64::MAX]);
            corruption::subset_loss_batch(&mut outcomes, frac, &mut rng);
        }
        Ok(outcomes)
    }

    /// Run one optimizer step.
    pub fn step(&mut self) -> Result<StepRecord> {
        let t = self.state.step;
        if t >= self.cfg.total_steps {
            return Err(Error::StepOutOfRange {
                step: t,
                total: self.cfg.total_steps,
            });
        }
        let started = Instant::now();
        let rate = self.schedule.masking_rate(t)?;
        let lr = lr_at(&self.cfg, t)?;
        let eval_loss = if self.cfg.eval_every > 0 && t.is_multiple_of(self.cfg.eval_every) {
            self.evaluate()?
        } else {
            None
        };

        let outcomes = self.corrupt_step(t, rate)?;
        let batch = Batch::collate(outcomes.iter().map(|o| o.corrupted.as_slice()));
        let targets: Vec<Targets> = outcomes.iter().map(Targets::from).collect();
        let (loss, mut grads) = model::backward(&self.state.params, &batch, &targets, self.cfg.heads())?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: t,
                reason: format!("loss is {loss}"),
            });
        }
        if let Some(max_norm) = self.cfg.grad_clip {
            let norm = grads.l2_norm();
            if norm > max_norm {
                grads.scale(max_norm / norm);
            }
        }
        adamw_step(
            &mut self.state.params,
            &grads,
            &mut self.state.opt,
            lr,
            &AdamW::from(&self.cfg),
        )
        .map_err(|e| match e {
            Error::Diverged { reason, .. } => Error::Diverged { step: t, reason },
            e => e,
        })?;
        if !self.state.params.all_finite() {
            return Err(Error::Diverged {
                step: t,
                reason: "non-finite parameters after update".into(),
            });
        }
        self.state.step = t + 1;

        let maskable: Vec<usize> = outcomes.iter().map(|o| o.original.maskable().len()).collect();
        let total_maskable: usize = maskable.iter().sum();
        let loss_cap = self
            .cfg
            .corruption
            .subset_loss_fraction
            .map(|f| (f * total_maskable as f64).round() as usize);
        Ok(StepRecord {
            step: t,
            rate,
            lr,
            loss,
            eval_loss,
            wall_ms: self.record_wall_time.then(|| started.elapsed().as_millis() as u64),
            maskable: total_maskable,
            masked: outcomes.iter().map(|o| o.mask_set.len()).sum(),
            loss_tokens: outcomes.iter().map(|o| o.loss_set.len()).sum(),
            loss_cap,
        })
    }

    /// Train to `total_steps`, calling `on_checkpoint` every
    /// `checkpoint_every` steps and once at the end.
    pub fn run<F>(mut self, mut on_checkpoint: F) -> Result<TrainOutcome>
    where
        F: FnMut(&TrainState) -> Result<()>,
    {
        let start_eval_loss = self.evaluate()?;
        let mut metrics = RunMetrics::default();
        while !self.is_done() {
            let rec = self.step()?;
            metrics.records.push(rec);
            let s = self.state.step;
            if self.cfg.checkpoint_every > 0 && s.is_multiple_of(self.cfg.checkpoint_every) && s < self.cfg.total_steps
            {
                on_checkpoint(&self.state)?;
            }
        }
        on_checkpoint(&self.state)?;
        let final_eval_loss = self.evaluate()?;
        Ok(TrainOutcome {
            metrics,
            state: self.state,
            start_eval_loss,
            final_eval_loss,
        })
    }
}

/// Train from scratch without writing checkpoints.
pub fn train(
    cfg: &TrainConfig,
    model: &ModelConfig,
    dataset: &[TokenSequence],
    eval: Option<EvalSet<'_>>,
) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone(), model, dataset, eval)?.run(|_| Ok(()))
}

/// Continue a run from a saved state. `prior` holds the metrics logged before
/// the checkpoint; records at or after the checkpoint step are discarded.
pub fn resume(
    cfg: &TrainConfig,
    saved_cfg: &TrainConfig,
    state: TrainState,
    prior: RunMetrics,
    dataset: &[TokenSequence],
    eval: Option<EvalSet<'_>>,
) -> Result<TrainOutcome> {
    if cfg != saved_cfg {
        return Err(Error::CheckpointMismatch(
            "training config differs from the one stored in the checkpoint".into(),
        ));
    }
    let step = state.step;
    let out = Trainer::from_state(cfg.clone(), state, dataset, eval)?.run(|_| Ok(()))?;
    let mut records: Vec<StepRecord> = prior.records.into_iter().filter(|r| r.step < step).collect();
    records.extend(out.metrics.records);
    Ok(TrainOutcome {
        metrics: RunMetrics { records },
        ..out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(total: u64) -> TrainConfig {
        TrainConfig::new(total, 4, "constant-0.15")
    }

    #[test]
    fn lr_schedule_anchor_points() {
        let c = cfg(10_000);
        assert_eq!(lr_at(&c, 0).unwrap(), 0.0);
        assert_abs_diff_eq!(lr_at(&c, 600).unwrap(), 5e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(lr_at(&c, 10_000).unwrap(), 1e-5, epsilon = 1e-18);
        assert_abs_diff_eq!(lr_at(&c, 300).unwrap(), 2.5e-4, epsilon = 1e-18);
        assert!(lr_at(&c, 10_001).is_err());
        let mid = 600 + (10_000 - 600) / 2;
        assert_abs_diff_eq!(lr_at(&c, mid).unwrap(), (5e-4 + 1e-5) / 2.0, epsilon = 1e-15);
    }

    fn scalar_params(theta: f64) -> ModelParams {
        let mut p = ModelParams::zeros(&ModelConfig {
            n_layers: 1,
            n_heads: 1,
            d_model: 1,
            d_ff: 1,
            vocab_size: 1,
            max_seq_len: 1,
            init_seed: 0,
            tie_embeddings: false,
        })
        .unwrap();
        p.rts_b.data[0] = theta;
        p
    }

    #[test]
    fn adamw_single_scalar_matches_hand_computation() {
        let mut p = scalar_params(1.0);
        let mut g = p.zeros_like();
        g.rts_b.data[0] = 1.0;
        let mut opt = OptState::new(&p);
        let hp = AdamW::from(&cfg(10));
        adamw_step(&mut p, &g, &mut opt, 0.1, &hp).unwrap();
        // m = 0.1, v = 0.02; bias-corrected m̂ = 1, v̂ = 1.
        let m_hat = (1.0 - 0.9) * 1.0 / (1.0 - 0.9);
        let v_hat = (1.0 - 0.98) * 1.0 / (1.0 - 0.98);
        let expected = 1.0 - 0.1 * (m_hat / (f64::sqrt(v_hat) + 1e-6) + 1e-5 * 1.0);
        assert_abs_diff_eq!(p.rts_b.data[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(p.rts_b.data[0], 0.899_999_1, epsilon = 1e-6);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let p0 = ModelParams::init(&ModelConfig::tiny()).unwrap();
        let mut p = p0.clone();
        let g = p.zeros_like();
        let mut opt = OptState::new(&p);
        let hp = AdamW {
            weight_decay: 0.0,
            ..AdamW::from(&cfg(10))
        };
        adamw_step(&mut p, &g, &mut opt, 0.1, &hp).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_geometrically() {
        let p0 = ModelParams::init(&ModelConfig::tiny()).unwrap();
        let mut p = p0.clone();
        let g = p.zeros_like();
        let mut opt = OptState::new(&p);
        let hp = AdamW {
            weight_decay: 0.01,
            ..AdamW::from(&cfg(10))
        };
        let lr = 0.5;
        for _ in 0..3 {
            adamw_step(&mut p, &g, &mut opt, lr, &hp).unwrap();
        }
        for (x, y) in p.tok_emb.data.iter().zip(&p0.tok_emb.data) {
            let mut e = *y;
            for _ in 0..3 {
                e -= lr * 0.01 * e;
            }
            assert_eq!(*x, e);
        }
        // Layer norm is excluded from decay.
        assert_eq!(p.ln_final, p0.ln_final);
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut p = scalar_params(1.0);
        let mut g = p.zeros_like();
        g.rts_b.data[0] = f64::NAN;
        let mut opt = OptState::new(&p);
        let r = adamw_step(&mut p, &g, &mut opt, 0.1, &AdamW::from(&cfg(10)));
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(10).validate().is_ok());
        assert!(TrainConfig::new(10, 4, "linear-0.3").validate().is_err());
        assert!(TrainConfig {
            warmup_fraction: 0.0,
            ..cfg(10)
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            final_lr: 1.0,
            ..cfg(10)
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..cfg(10)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn metrics_round_trip_and_ordering() {
        let rec = |step| StepRecord {
            step,
            rate: 0.15,
            lr: 1e-4,
            loss: 2.5,
            eval_loss: (step == 0).then_some(3.0),
            wall_ms: None,
            maskable: 10,
            masked: 2,
            loss_tokens: 2,
            loss_cap: None,
        };
        let m = RunMetrics {
            records: vec![rec(0), rec(1)],
        };
        let s = m.to_jsonl().unwrap();
        assert!(s.lines().next().unwrap().contains("\"eval_loss\":3.0"));
        assert!(!s.contains("wall_ms"));
        assert_eq!(RunMetrics::from_jsonl(&s).unwrap(), m);
        // Re-serializing parsed records must reproduce the bytes exactly.
        let awkward = RunMetrics {
            records: vec![StepRecord {
                lr: 0.00045308510638297875,
                loss: 5.259060218198714,
                ..rec(0)
            }],
        };
        let text = awkward.to_jsonl().unwrap();
        assert_eq!(RunMetrics::from_jsonl(&text).unwrap().to_jsonl().unwrap(), text);
        let bad = RunMetrics {
            records: vec![rec(1), rec(1)],
        }
        .to_jsonl()
        .unwrap();
        assert!(RunMetrics::from_jsonl(&bad).is_err());
    }
}
