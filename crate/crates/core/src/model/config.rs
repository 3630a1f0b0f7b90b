use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::DEFAULT_EPS_LN;

/// Architecture of the decoder stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Longest token sequence the positional table covers.
    pub max_seq_len: usize,
    /// Apply layer normalization in each Add & Norm.
    pub use_ln: bool,
    /// Add the block input back before normalizing.
    pub use_residual: bool,
    /// Feedforward block after attention.
    pub use_mlp: bool,
    /// Hidden width of the feedforward block.
    pub mlp_hidden: usize,
    /// Divide attention scores by `sqrt(d_head)`.
    pub softmax_scale: bool,
    /// Add the learned positional table to token embeddings.
    pub use_positional: bool,
    pub eps_ln: f64,
    /// Standard deviation of the Gaussian initialization of every matrix.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 8,
            d_model: 64,
            max_seq_len: 2 * 41,
            use_ln: true,
            use_residual: true,
            use_mlp: false,
            mlp_hidden: 256,
            softmax_scale: true,
            use_positional: true,
            eps_ln: DEFAULT_EPS_LN,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 {
            return bad(format!(
                "layers, heads and d_model must be positive (got {}, {}, {})",
                self.layers, self.heads, self.d_model
            ));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        if self.use_ln && self.d_model < 2 {
            return bad("layer normalization needs d_model >= 2".into());
        }
        if self.use_mlp && self.mlp_hidden == 0 {
            return bad("mlp_hidden must be positive when the MLP is enabled".into());
        }
        if !(self.eps_ln >= 0.0) || !(self.init_std >= 0.0) {
            return bad("eps_ln and init_std must be non-negative".into());
        }
        Ok(())
    }

    pub fn attention_scale(&self) -> f64 {
        if self.softmax_scale {
            1.0 / (self.d_head() as f64).sqrt()
        } else {
            1.0
        }
    }
}
