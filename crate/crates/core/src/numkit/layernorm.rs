//! Layer normalization over the feature axis.
//!
//! `y = (v - mean(v)) / sqrt(var(v) + eps) * gain + shift`, with the
//! population variance (divide by the vector length).

use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_EPS_LN: f64 = 1e-5;

pub fn layernorm_apply<T: Scalar>(v: &[T], gain: &[T], shift: &[T], eps: T) -> Result<Vec<T>> {
    if v.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "layer normalization needs at least 2 features, got {}",
            v.len()
        )));
    }
    if gain.len() != v.len() || shift.len() != v.len() {
        return Err(Error::shape(
            "layernorm_apply",
            v.len(),
            format!("gain {} / shift {}", gain.len(), shift.len()),
        ));
    }
    let mut out = vec![T::zero(); v.len()];
    normalize_row(v, gain, shift, eps, &mut out, None);
    Ok(out)
}

/// Normalizes one row; optionally records the normalized values. Returns 1/std.
#[inline]
fn normalize_row<T: Scalar>(
    v: &[T],
    gain: &[T],
    shift: &[T],
    eps: T,
    out: &mut [T],
    xhat: Option<&mut [T]>,
) -> T {
    let n = T::of(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let inv_std = (var + eps).sqrt().recip();
    match xhat {
        Some(xh) => {
            for i in 0..v.len() {
                let z = (v[i] - mean) * inv_std;
                xh[i] = z;
                out[i] = z * gain[i] + shift[i];
            }
        }
        None => {
            for i in 0..v.len() {
                out[i] = (v[i] - mean) * inv_std * gain[i] + shift[i];
            }
        }
    }
    inv_std
}

/// Saved forward state needed by the backward pass.
#[derive(Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
}

/// Row-wise layer normalization of an `n x d` matrix.
pub fn layernorm_rows<T: Scalar>(
    x: &Matrix<T>,
    gain: &[T],
    shift: &[T],
    eps: T,
) -> (Matrix<T>, LayerNormCache<T>) {
    let (n, d) = x.shape();
    let mut out = Matrix::zeros(n, d);
    let mut xhat = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let s = normalize_row(x.row(r), gain, shift, eps, out.row_mut(r), Some(xhat.row_mut(r)));
        inv_std.push(s);
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// Backward pass of [`layernorm_rows`]. Returns `(dx, dgain, dshift)`.
pub fn layernorm_rows_backward<T: Scalar>(
    dy: &Matrix<T>,
    gain: &[T],
    cache: &LayerNormCache<T>,
) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let (n, d) = dy.shape();
    let nd = T::of(d as f64);
    let mut dx = Matrix::zeros(n, d);
    let mut dgain = vec![T::zero(); d];
    let mut dshift = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..n {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for i in 0..d {
            dgain[i] += g[i] * xh[i];
            dshift[i] += g[i];
            dxhat[i] = g[i] * gain[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat /= nd;
        mean_dxhat_xhat /= nd;
        let s = cache.inv_std[r];
        let out = dx.row_mut(r);
        for i in 0..d {
            out[i] = s * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dshift)
}
