//! Scalar abstraction for the closed-form math kernels: f32 or f64.

use num_traits::{Float, FloatConst, FromPrimitive};

pub trait Real: Float + FloatConst + FromPrimitive + std::fmt::Debug + std::fmt::Display + 'static {
    /// Lift an `f64` constant into the scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
