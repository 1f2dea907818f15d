//! Scalar abstraction for the geometry core.

use std::fmt::Debug;

/// Floating-point scalar the coordinate-frame math is generic over:
/// `f32` or `f64`.
pub trait Float: num_traits::Float + num_traits::FromPrimitive + Debug + Default {
    /// Lossless-enough conversion from an `f64` constant.
    fn from_f64_const(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant must convert")
    }
}

impl Float for f32 {}
impl Float for f64 {}
