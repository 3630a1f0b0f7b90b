use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Softmax over the positions where `mask` is true; masked positions get 0.
///
/// The maximum kept score is subtracted before exponentiation.
pub fn softmax_masked<T: Scalar>(scores: &[T], mask: &[bool]) -> Result<Vec<T>> {
    if scores.len() != mask.len() {
        return Err(Error::shape("softmax_masked", scores.len(), mask.len()));
    }
    let mut max = T::neg_infinity();
    let mut any = false;
    for (&s, &keep) in scores.iter().zip(mask) {
        if s.is_nan() {
            return Err(Error::NonFinite("softmax score".into()));
        }
        if keep {
            any = true;
            max = max.max(s);
        }
    }
    if !any {
        return Err(Error::AllMasked);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax score".into()));
    }
    let mut out = vec![T::zero(); scores.len()];
    let mut total = T::zero();
    for ((o, &s), &keep) in out.iter_mut().zip(scores).zip(mask) {
        if keep {
            *o = (s - max).exp();
            total += *o;
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Softmax of a prefix `scores[..=last]`, written into `out[..=last]`; the
/// remainder of `out` is zeroed. This is the causal-row form used by attention.
pub(crate) fn softmax_prefix_into<T: Scalar>(scores: &[T], last: usize, out: &mut [T]) {
    let kept = &scores[..=last];
    let max = kept.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
    let mut total = T::zero();
    for (o, &s) in out[..=last].iter_mut().zip(kept) {
        *o = (s - max).exp();
        total += *o;
    }
    let inv = total.recip();
    for o in &mut out[..=last] {
        *o *= inv;
    }
    for o in &mut out[last + 1..] {
        *o = T::zero();
    }
}

/// Vector-Jacobian product of softmax: given probabilities `p` and upstream
/// gradient `dp`, returns the gradient with respect to the scores.
pub fn softmax_backward<T: Scalar>(p: &[T], dp: &[T]) -> Vec<T> {
    let dot: T = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
    p.iter().zip(dp).map(|(&pi, &gi)| pi * (gi - dot)).collect()
}
