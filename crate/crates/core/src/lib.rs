// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checks;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod numkit;
pub mod presets;
pub mod scalar;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};

/// Double-precision model.
pub type Model = model::Transformer<f64>;
/// Double-precision checkpoint.
pub type ModelCheckpoint = model::Checkpoint<f64>;
/// Double-precision trainer.
pub type F64Trainer = trainer::Trainer<f64>;
/// Double-precision training outcome.
pub type F64TrainOutcome = trainer::TrainOutcome<f64>;
