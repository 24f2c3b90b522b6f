//! Floating-point abstraction shared by the physics fields and the tensor engine.

use std::fmt::{Debug, Display};

/// Element type for fields and tensors. Implemented for `f32` and `f64`.
///
/// Arithmetic that is sensitive to accumulation order (convolutions, reductions,
/// normalization statistics) promotes through [`Scalar::to_f64`] and rounds once on
/// the way back out, so f32 storage never pays f32 accumulation error.
pub trait Scalar:
    num_traits::Float + num_traits::NumCast + Copy + Send + Sync + Debug + Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Gauss error function, used by the exact GELU.
    fn erf(self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn erf(self) -> Self {
        // Evaluate in f64: erff is only faithful to ~1e-6 and the gradient
        // checks compare against f64 central differences.
        libm::erf(self as f64) as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}
