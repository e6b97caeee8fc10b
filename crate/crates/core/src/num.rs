//! Scalar abstraction for the numeric kernels.
//!
//! Correlation, normal-tail, n-gram probability, and REML code are written
//! against this trait so they instantiate at `f32` or `f64`; everything that
//! crosses a serialization boundary uses [`crate::Real`] instead.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the generic kernels.
pub trait Scalar: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `F`, for constants inside generic code.
pub(crate) fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 literal must be representable in the scalar type")
}
