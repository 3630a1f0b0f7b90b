use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear ramp of the number of in-context inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of the run over which the length ramps from `min_len` to
    /// `max_len`; afterwards it stays at `max_len`.
    pub ramp_fraction: f64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            min_len: 1,
            max_len: 40,
            ramp_fraction: 0.5,
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig(format!(
                "curriculum needs 1 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("ramp_fraction must lie in (0, 1], got {}", self.ramp_fraction)));
        }
        Ok(())
    }

    /// Fraction of the ramp completed at `step` of a `total_steps` run, in [0, 1].
    pub fn progress(&self, step: usize, total_steps: usize) -> f64 {
        let last = total_steps.saturating_sub(1).max(1) as f64;
        let ramp_end = self.ramp_fraction * last;
        (step as f64 / ramp_end).min(1.0)
    }
}

/// Number of in-context examples `k` at `step` (0-based) of a run with
/// `total_steps` steps. Training prompts carry `k + 1` inputs, the last
/// one being the query.
pub fn curriculum_length(step: usize, total_steps: usize, schedule: &CurriculumSchedule) -> usize {
    let span = (schedule.max_len - schedule.min_len) as f64;
    let len = schedule.min_len + (span * schedule.progress(step, total_steps)).floor() as usize;
    len.min(schedule.max_len)
}

/// Prefix of the sorted degree set unlocked at `step`; at least one degree
/// is always available and the full set is open once the ramp completes.
pub fn curriculum_degrees(step: usize, total_steps: usize, schedule: &CurriculumSchedule, degrees: &[usize]) -> Vec<usize> {
    let mut sorted = degrees.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let open = 1 + ((sorted.len().saturating_sub(1)) as f64 * schedule.progress(step, total_steps)).floor() as usize;
    sorted.truncate(open.min(sorted.len()));
    sorted
}
