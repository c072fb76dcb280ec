//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar usable by the dense and sparse kernels.
///
/// Implemented for `f32` and `f64`. Everything numeric in this crate is
/// generic over it; the crate root re-exports `f64` aliases for the common
/// case.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::LowerExp + std::fmt::Display
{
    /// Converts an `f64` literal or parameter into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the type.
    fn epsilon() -> Self;
}

impl Scalar for f32 {
    fn epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn epsilon() -> Self {
        f64::EPSILON
    }
}

/// Infinity norm of a slice, `0` for empty input.
pub fn norm_inf<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Euclidean norm of a slice.
pub fn norm2<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, x| acc + *x * *x).sqrt()
}
