//! Small transformer encoder with MLM and RTS heads.

mod forward;
mod gradcheck;
mod params;

pub use forward::{
    backward, backward_from_output, backward_scaled, forward, log_softmax_at, mlm_loss, rts_loss, softmax,
    ForwardOutput, Heads, Targets, LN_EPS,
};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, WorstCoordinate};
pub use params::{
    Gradients, LayerNormParams, LayerParams, ModelConfig, ModelParams, ParamClass, Tensor, TensorInfo, INIT_STD,
};
