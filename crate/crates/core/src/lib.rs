//! Two-stage roll angle observer for motorcycles.
//!
//! A model-free pre-filter turns GNSS velocity and accelerometer data into a
//! pseudo-measurement of the attitude quaternion, and an information-form
//! extended Kalman filter fuses it with the gyroscope to estimate roll and
//! gyro bias.

// NaN-rejecting guards are written as `!(x > 0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attitude;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod ekf;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod prefilter;
pub mod scalar;
pub mod sensors;
pub mod trajectory;
pub mod validation;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Ekf64 = ekf::Ekf<f64>;
pub type Ekf32 = ekf::Ekf<f32>;
pub type Prefilter64 = prefilter::Prefilter<f64>;
pub type Prefilter32 = prefilter::Prefilter<f32>;
pub type Observer64 = pipeline::Observer<f64>;
pub type Observer32 = pipeline::Observer<f32>;
pub type Frame64 = sensors::MeasurementFrame<f64>;
pub type Frame32 = sensors::MeasurementFrame<f32>;
