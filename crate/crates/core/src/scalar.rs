//! Scalar abstraction for the numeric core.
//!
//! Everything in the math layers is generic over [`Scalar`] so the same code
//! runs in `f32` or `f64`. The crate-root aliases pin `f64` as the default
//! precision; the diagnostic tolerances in the test suites assume it.

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar for all dense linear algebra and training math.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant")
    }

    /// Widen to `f64` for accumulation and reporting.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
