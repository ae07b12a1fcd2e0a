//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! The math is written once against [`Real`] and instantiated for `f64`
//! (the default, see the aliases at the crate root) and `f32`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the calibration code: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal or configuration value into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.25).as_f64(), 0.25);
        assert_eq!(f32::lit(0.5).as_f64(), 0.5);
    }
}
