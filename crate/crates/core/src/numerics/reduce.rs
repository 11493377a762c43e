//! Numerically stable reductions in the log domain.

use crate::real::Real;
use crate::{Error, Result};

/// log(sum_i exp(v_i)) computed as max(v) + log(sum_i exp(v_i - max(v))).
///
/// Entries may be -inf (zero-probability terms); they drop out of the sum.
/// An all-(-inf) input returns -inf. NaN or +inf entries are rejected.
pub fn log_sum_exp<R: Real>(v: &[R]) -> Result<R> {
    if v.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let mut max = R::neg_infinity();
    for &x in v {
        if x.is_nan() || x == R::infinity() {
            return Err(Error::NonFinite(format!("log_sum_exp entry {x}")));
        }
        if x > max {
            max = x;
        }
    }
    if max == R::neg_infinity() {
        return Ok(R::neg_infinity());
    }
    let mut sum = R::zero();
    for &x in v {
        sum = sum + (x - max).exp();
    }
    Ok(max + sum.ln())
}

/// logits - log_sum_exp(logits); exponentials of the result sum to one.
///
/// Unlike [`log_sum_exp`] this requires every entry finite.
pub fn log_softmax<R: Real>(logits: &[R]) -> Result<Vec<R>> {
    if logits.is_empty() {
        return Err(Error::EmptyReduction);
    }
    for &x in logits {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("log_softmax entry {x}")));
        }
    }
    let lse = log_sum_exp(logits)?;
    Ok(logits.iter().map(|&x| x - lse).collect())
}
