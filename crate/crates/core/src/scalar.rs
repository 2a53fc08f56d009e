use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, NumCast};

/// Floating point scalar used throughout the geometry and imaging code: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssignOps + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as NumCast>::from(x).unwrap()
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        <Self as NumCast>::from(x).unwrap()
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        <f32 as NumCast>::from(self).unwrap_or(f32::NAN)
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }

    /// Converts between scalar types (`f32` <-> `f64`).
    #[inline]
    fn cast<U: Real>(self) -> U {
        U::lit(self.to_f64_lossy())
    }
}

impl Real for f32 {}
impl Real for f64 {}
