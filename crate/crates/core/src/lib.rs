//! Dynamic magnetometer calibration and alignment to inertial sensors.
//!
//! The crate estimates the magnetometer calibration matrix `S` and bias `h`,
//! the magnetometer-to-body misalignment, and the gyroscope bias from
//! hand-tumbled motion data, using a 24-state error-state Kalman filter.
//! Batch solvers and observability Gramians provide independent checks, and a
//! simulator produces data with known ground truth.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix it to `f64`.

pub mod batch;
pub mod ekf;
pub mod error;
pub mod io;
pub mod observability;
pub mod scalar;
pub mod sim;
pub mod so3;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3 = so3::Vec3<f64>;
pub type Mat3 = so3::Mat3<f64>;
pub type Dcm = so3::Dcm<f64>;
pub type Sample = sim::SensorSample<f64>;
pub type Gramians = observability::GramianSet<f64>;
