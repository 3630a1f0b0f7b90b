use crate::error::{Error, Result};
use crate::evaluator::least_squares::{eval_poly, least_squares_fit};
use crate::model::Transformer;
use crate::scalar::Scalar;
use crate::tasks::{prompt_from_points, FunctionSpec};

/// Points `(x_k, g(x_k))` of one growing-prefix episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// Anything that predicts `y_k` from `(x_1, y_1, ..., x_{k-1}, y_{k-1}, x_k)`.
pub trait Predictor {
    /// For every episode, the prediction at each `k = 1..=len`.
    ///
    /// `function` is the target shared by all episodes; only the
    /// ground-truth predictor may look at it.
    fn predict(&self, function: &FunctionSpec, episodes: &[Episode]) -> Result<Vec<Vec<f64>>>;

    fn name(&self) -> String;
}

/// Outputs zero everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl Predictor for ZeroPredictor {
    fn predict(&self, _: &FunctionSpec, episodes: &[Episode]) -> Result<Vec<Vec<f64>>> {
        Ok(episodes.iter().map(|e| vec![0.0; e.xs.len()]).collect())
    }

    fn name(&self) -> String {
        "zero".into()
    }
}

/// Evaluates the target function itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn predict(&self, function: &FunctionSpec, episodes: &[Episode]) -> Result<Vec<Vec<f64>>> {
        Ok(episodes.iter().map(|e| e.xs.iter().map(|&x| function.eval(x)).collect()).collect())
    }

    fn name(&self) -> String {
        "ground-truth".into()
    }
}

/// Fits a degree-`degree` polynomial to the prefix and evaluates it at the
/// query. Positions whose prefix is too short to determine the fit yield NaN.
#[derive(Debug, Clone, Copy)]
pub struct LeastSquares {
    pub degree: usize,
}

impl Predictor for LeastSquares {
    fn predict(&self, _: &FunctionSpec, episodes: &[Episode]) -> Result<Vec<Vec<f64>>> {
        episodes
            .iter()
            .map(|e| {
                let pts: Vec<(f64, f64)> = e.xs.iter().copied().zip(e.ys.iter().copied()).collect();
                (0..pts.len())
                    .map(|k| match least_squares_fit(&pts[..k], self.degree) {
                        Ok(c) => Ok(eval_poly(&c, pts[k].0)),
                        Err(Error::InsufficientPoints { .. }) => Ok(f64::NAN),
                        Err(e) => Err(e),
                    })
                    .collect()
            })
            .collect()
    }

    fn name(&self) -> String {
        format!("least-squares(degree {})", self.degree)
    }
}

impl<T: Scalar> Predictor for Transformer<T> {
    /// One causal pass over each full episode yields every prefix prediction.
    fn predict(&self, function: &FunctionSpec, episodes: &[Episode]) -> Result<Vec<Vec<f64>>> {
        let prompts = episodes
            .iter()
            .map(|e| prompt_from_points(function, &e.xs, &e.ys, false))
            .collect::<Result<Vec<_>>>()?;
        let preds = self.predict_batch(&prompts)?;
        Ok(preds.into_iter().map(|p| p.into_iter().map(Scalar::as_f64).collect()).collect())
    }

    fn name(&self) -> String {
        let c = &self.config;
        format!("transformer({}L{}AH d{}{})", c.layers, c.heads, c.d_model, if c.use_ln { "" } else { " no-LN" })
    }
}
