//! Target-function sampling and prompt construction.

mod curriculum;
mod distribution;
mod function;
mod prompt;
pub mod rng;

use serde::{Deserialize, Serialize};

pub use curriculum::{curriculum_degrees, curriculum_length, CurriculumSchedule};
pub use distribution::DistributionSpec;
pub use function::{direction_set, sample_function, FunctionSpec, Regime};
pub use prompt::{build_prompt, prompt_from_points, PromptBatch};
pub use rng::{stream, Rng};

use crate::error::{Error, Result};

/// Everything needed to draw training prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub regime: Regime,
    pub degrees: Vec<usize>,
    /// Input distribution `D_I`.
    pub inputs: DistributionSpec,
    /// Coefficient distribution `D_F`.
    pub coefficients: DistributionSpec,
    /// Number of directions for [`Regime::Directions`].
    pub direction_count: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            regime: Regime::Standard,
            degrees: vec![1],
            inputs: DistributionSpec::uniform(1.0),
            coefficients: DistributionSpec::uniform(1.0),
            direction_count: 8,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.degrees.is_empty() {
            return Err(Error::InvalidConfig("degree set is empty".into()));
        }
        self.inputs.validate()?;
        self.coefficients.validate()?;
        if matches!(self.regime, Regime::Components | Regime::Directions) && self.degrees.iter().any(|&d| d != 1) {
            return Err(Error::Regime(format!("{:?} requires degree set {{1}}", self.regime)));
        }
        if self.regime == Regime::Directions && self.direction_count == 0 {
            return Err(Error::InvalidConfig("direction_count must be positive".into()));
        }
        Ok(())
    }

    /// Draws a function and `len` inputs and builds a query-terminated prompt.
    pub fn sample_prompt(&self, degrees: &[usize], len: usize, rng: &mut Rng) -> Result<PromptBatch> {
        let dirs = direction_set(self.direction_count);
        let f = sample_function(self.regime, degrees, &self.coefficients, &dirs, rng)?;
        let xs = self.inputs.sample_n(len, rng);
        build_prompt(&f, &xs, false)
    }
}
