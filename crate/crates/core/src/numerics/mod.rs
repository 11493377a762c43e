//! Deterministic dense linear algebra, stable reductions and seeded sampling.
//!
//! Everything here is pure given its inputs. [`RngStream`] is single-owner:
//! parallel work must split streams with [`RngStream::substream`] instead of
//! sharing one generator.

pub mod parallel;
mod reduce;
mod rng;
mod tensor;

pub use reduce::{log_softmax, log_sum_exp};
pub use rng::RngStream;
pub use tensor::Tensor;

use crate::{Error, Result};

/// Sample an i.i.d. {0,1} mask with keep probability `p_keep`.
///
/// Consumes exactly one `u64` draw per entry, in row-major order.
pub fn sample_bernoulli_mask(rng: &mut RngStream, p_keep: f64, shape: &[usize]) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&p_keep) {
        return Err(Error::InvalidParameter(format!(
            "p_keep must lie in [0,1], got {p_keep}"
        )));
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        // next_f64 is in [0,1), so p_keep = 1 keeps everything and
        // p_keep = 0 drops everything.
        data.push(if rng.next_f64() < p_keep { 1.0 } else { 0.0 });
    }
    Tensor::from_vec(shape.to_vec(), data)
}

/// Sample i.i.d. normal entries, two `u64` draws per entry, row-major order.
pub fn sample_gaussian(rng: &mut RngStream, mean: f64, stddev: f64, shape: &[usize]) -> Result<Tensor> {
    if !stddev.is_finite() || stddev < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "stddev must be finite and >= 0, got {stddev}"
        )));
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(mean + stddev * rng.normal());
    }
    Tensor::from_vec(shape.to_vec(), data)
}
