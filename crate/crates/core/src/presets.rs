//! Named run configurations for the desk-scale experiments.

use crate::model::ModelConfig;
use crate::trainer::RunConfig;

/// Steps used by the desk-scale runs.
pub const DESK_STEPS: usize = 20_000;

/// Degree-1 regression on `U(-1, 1)` inputs and coefficients with the
/// 8-head, width-64 decoder; `layers` and `use_ln` select the variant.
pub fn desk_linear(layers: usize, use_ln: bool, seed: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            layers,
            use_ln,
            ..ModelConfig::default()
        },
        steps: DESK_STEPS,
        seed,
        ..RunConfig::default()
    }
}

/// The four variants compared in the acceptance suite, by name.
pub fn desk_suite(seed: u64) -> Vec<(&'static str, RunConfig)> {
    vec![
        ("l2-ln", desk_linear(2, true, seed)),
        ("l2-noln", desk_linear(2, false, seed)),
        ("l1-ln", desk_linear(1, true, seed)),
        ("l1-noln", desk_linear(1, false, seed)),
    ]
}
