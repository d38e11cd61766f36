//! Scalar trait the numeric kernels are generic over.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Convert an `f64` literal, panicking only for values outside the
    /// target type's range (never the case for the constants used here).
    fn from_f64_lit(value: f64) -> Self {
        Self::from_f64(value).expect("literal not representable")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}
