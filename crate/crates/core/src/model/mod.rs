//! Attention-only (optionally full) decoder transformer over scalar tokens.

mod checkpoint;
mod config;
mod forward;
mod weights;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use forward::{attention_head, ForwardOutput, ForwardTrace, Transformer};
pub use weights::{tensor_shapes, LayerWeights, MlpWeights, TransformerWeights};

#[cfg(test)]
mod tests;
