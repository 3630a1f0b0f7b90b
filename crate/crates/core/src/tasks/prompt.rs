use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::FunctionSpec;

/// One in-context prompt `(x_1, g(x_1), ..., x_q [, g(x_q)])`.
///
/// Each scalar is one token. The prediction for `g(x_i)` is read at the
/// token holding `x_i`, so `targets[i]` belongs to token `2 * i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBatch {
    pub tokens: Vec<f64>,
    /// `g(x_i)` for every input in the prompt.
    pub targets: Vec<f64>,
    /// Per token: true at input positions whose target is known.
    pub loss_mask: Vec<bool>,
    pub function: FunctionSpec,
    /// Number of inputs `q`.
    pub len: usize,
}

impl PromptBatch {
    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        self.tokens.iter().step_by(2).copied()
    }

    /// Token indices where the mask is set, in order.
    pub fn loss_positions(&self) -> Vec<usize> {
        self.loss_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Index of the final input token (the query).
    pub fn query_position(&self) -> usize {
        2 * (self.len - 1)
    }
}

pub fn build_prompt(f: &FunctionSpec, xs: &[f64], include_final_y: bool) -> Result<PromptBatch> {
    let ys: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
    prompt_from_points(f, xs, &ys, include_final_y)
}

/// Prompt over already-evaluated points; `ys[i]` is the target of `xs[i]`.
pub fn prompt_from_points(f: &FunctionSpec, xs: &[f64], ys: &[f64], include_final_y: bool) -> Result<PromptBatch> {
    if xs.is_empty() {
        return Err(Error::InvalidConfig("prompt needs at least one input".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::shape("prompt_from_points", xs.len(), ys.len()));
    }
    let mut tokens = Vec::with_capacity(2 * xs.len());
    for (&x, &y) in xs.iter().zip(ys) {
        tokens.push(x);
        tokens.push(y);
    }
    if !include_final_y {
        tokens.pop();
    }
    let loss_mask = (0..tokens.len()).map(|i| i % 2 == 0).collect();
    Ok(PromptBatch {
        tokens,
        targets: ys.to_vec(),
        loss_mask,
        function: f.clone(),
        len: xs.len(),
    })
}
