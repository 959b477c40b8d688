//! Dense full-precision LLaMA-style decoder: RMSNorm, SwiGLU FFN, rotary
//! multi-head causal attention, tied output head.

mod config;
mod forward;
mod model;
mod slice;
mod trace;

pub use config::ModelConfig;
pub use forward::{forward, forward_traced, RMS_EPS};
pub use model::{LayerWeights, ModelBundle};
pub use slice::{slice, slice_mask};
pub use trace::{ActivationTrace, AxisStats, LayerTrace};
