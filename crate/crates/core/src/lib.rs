//! Masked-language-model pretraining with scheduled masking rates.
//!
//! The crate covers the whole loop at desk scale: whitespace tokenization
//! ([`data`]), masking-rate schedules ([`schedule`]), 80/10/10 and RTS
//! corruption ([`corruption`]), a small f64 transformer encoder with exact
//! gradients ([`model`]), AdamW training with checkpoint resume
//! ([`trainer`]), fixed-rate and pseudo-log-likelihood evaluation
//! ([`evaluate`]), significance testing ([`stats`]) and speedup-curve
//! fitting ([`analysis`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod checkpoint;
pub mod corruption;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod schedule;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use corruption::{CorruptionConfig, MaskOutcome, Objective};
pub use data::{Batch, TokenSequence, Vocab};
pub use error::{Error, Result};
pub use model::{Heads, ModelConfig, ModelParams};
pub use schedule::{ScheduleKind, ScheduleSpec};
