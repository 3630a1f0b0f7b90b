//! Dense kernels, masked softmax, layer normalization, reverse-mode
//! gradients over a fixed primitive set, and Adam.

mod adam;
pub mod layernorm;
mod matrix;
pub mod softmax;
pub mod tape;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use layernorm::{layernorm_apply, DEFAULT_EPS_LN};
pub use matrix::Matrix;
pub use softmax::softmax_masked;
pub use tape::{AttentionShape, GradTape, NodeId};
