use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Polynomial of `degree` minimizing the squared residuals over `points`,
/// coefficients listed from the constant term up.
///
/// Solved through an SVD of the Vandermonde matrix, which stays accurate
/// when the normal equations would square its condition number.
pub fn least_squares_fit(points: &[(f64, f64)], degree: usize) -> Result<Vec<f64>> {
    let needed = degree + 1;
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < needed {
        return Err(Error::InsufficientPoints { needed, got: xs.len() });
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("least-squares data".into()));
    }
    let a = DMatrix::from_fn(points.len(), needed, |i, j| points[i].0.powi(j as i32));
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let coef = a
        .svd(true, true)
        .solve(&b, f64::EPSILON)
        .map_err(|e| Error::Degenerate(format!("least-squares solve: {e}")))?;
    Ok(coef.iter().copied().collect())
}

/// Horner evaluation of constant-first coefficients.
pub fn eval_poly(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}
