//! Masking-rate schedules: constant, linear, cosine and step-wise decay.
//!
//! Canonical names follow the `kind-{p_i}-{p_f}` convention, e.g.
//! `linear-0.3-0.15` or `constant-0.15`.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Linear,
    Cosine,
    Step,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Step => "step",
        }
    }
}

/// A masking-rate schedule over `total_steps` optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub p_initial: f64,
    pub p_final: f64,
    /// Steps at which the step-wise schedule multiplies the rate by `gamma`.
    pub decay_steps: Vec<u64>,
    pub gamma: f64,
    pub total_steps: u64,
}

impl ScheduleSpec {
    pub fn constant(p: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            p_initial: p,
            p_final: p,
            decay_steps: Vec::new(),
            gamma: 1.0,
            total_steps,
        }
    }

    pub fn linear(p_initial: f64, p_final: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            p_initial,
            p_final,
            decay_steps: Vec::new(),
            gamma: 1.0,
            total_steps,
        }
    }

    pub fn cosine(p_initial: f64, p_final: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            ..Self::linear(p_initial, p_final, total_steps)
        }
    }

    /// A single decay from `p_initial` to `p_final` halfway through training.
    pub fn step_halfway(p_initial: f64, p_final: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Step,
            p_initial,
            p_final,
            decay_steps: vec![total_steps / 2],
            gamma: p_final / p_initial,
            total_steps,
        }
    }

    /// General step-wise decay: the rate is multiplied by `gamma` at each step in `decay_steps`.
    pub fn step(p_initial: f64, gamma: f64, mut decay_steps: Vec<u64>, total_steps: u64) -> Self {
        decay_steps.sort_unstable();
        let p_final = p_initial * gamma.powi(decay_steps.len() as i32);
        Self {
            kind: ScheduleKind::Step,
            p_initial,
            p_final,
            decay_steps,
            gamma,
            total_steps,
        }
    }

    /// Checks every invariant and names the first violated one.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSchedule(m.to_string()));
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !in_unit(self.p_initial) || !in_unit(self.p_final) {
            return bad("rate out of [0,1]");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be >= 1");
        }
        match self.kind {
            ScheduleKind::Constant => {
                if self.p_initial != self.p_final {
                    return bad("constant requires p_i == p_f");
                }
            }
            ScheduleKind::Linear | ScheduleKind::Cosine => {}
            ScheduleKind::Step => {
                if !(self.gamma > 0.0 && self.gamma <= 1.0) {
                    return bad("step requires gamma in (0,1]");
                }
                if self.decay_steps.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("decay steps must be strictly increasing");
                }
                if self.decay_steps.iter().any(|&s| s >= self.total_steps) {
                    return bad("decay step outside [0, total_steps)");
                }
                let implied = self.p_initial * self.gamma.powi(self.decay_steps.len() as i32);
                if (implied - self.p_final).abs() > 1e-12 {
                    return bad("step requires p_f == p_i * gamma^|decay_steps|");
                }
            }
        }
        Ok(())
    }

    /// Masking rate at step `t`, for `0 <= t <= total_steps`.
    pub fn masking_rate(&self, t: u64) -> Result<f64> {
        self.validate()?;
        if t > self.total_steps {
            return Err(Error::StepOutOfRange {
                step: t,
                total: self.total_steps,
            });
        }
        Ok(self.rate_unchecked(t))
    }

    pub(crate) fn rate_unchecked(&self, t: u64) -> f64 {
        let (p_i, p_f) = (self.p_initial, self.p_final);
        let frac = t as f64 / self.total_steps as f64;
        match self.kind {
            ScheduleKind::Constant => p_i,
            ScheduleKind::Linear => p_i + frac * (p_f - p_i),
            ScheduleKind::Cosine => p_i + (p_f - p_i) / 2.0 * (1.0 + ((1.0 - frac) * PI).cos()),
            ScheduleKind::Step => {
                let k = self.decay_steps.iter().take_while(|&&s| s <= t).count();
                (0..k).fold(p_i, |p, _| p * self.gamma)
            }
        }
    }

    /// Canonical name, e.g. `linear-0.3-0.15`.
    pub fn name(&self) -> String {
        match self.kind {
            ScheduleKind::Constant => format!("constant-{}", self.p_initial),
            k => format!("{}-{}-{}", k.as_str(), self.p_initial, self.p_final),
        }
    }

    /// Parse a canonical name. Step schedules decay once, at `total_steps / 2`.
    pub fn parse(name: &str, total_steps: u64) -> Result<Self> {
        let bad = || {
            Error::InvalidSchedule(format!(
                "malformed schedule {name:?}; expected constant-P or linear|cosine|step-P_I-P_F"
            ))
        };
        let mut parts = name.split('-');
        let kind = parts.next().ok_or_else(bad)?;
        let rates: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let spec = match (kind, rates.as_slice()) {
            ("constant", [p]) => Self::constant(*p, total_steps),
            ("linear", [a, b]) => Self::linear(*a, *b, total_steps),
            ("cosine", [a, b]) => Self::cosine(*a, *b, total_steps),
            ("step", [a, b]) => Self::step_halfway(*a, *b, total_steps),
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}
