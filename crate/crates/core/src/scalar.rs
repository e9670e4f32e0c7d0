//! Scalar abstraction shared by the estimator math.
//!
//! The attitude, pre-filter, EKF and baseline code is written once against
//! [`Real`] and instantiated for `f64` (the default everywhere in the
//! pipeline) and `f32`.

use nalgebra::RealField;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the observer: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + FloatConst {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + FloatConst {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Lossy conversion back to `f64`, used for diagnostics and error payloads.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
