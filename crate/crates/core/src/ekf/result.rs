use serde::{Deserialize, Serialize};

use crate::batch::inclination_deg;
use crate::error::{Error, Result};
use crate::so3::{dcm_to_euler, qr_pos_diag, Dcm, Mat3, Vec3};

use super::{CalibState, Diagnostics};

/// Final, re-scaled calibration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CalibResult {
    /// `‖m^i‖·S`
    pub s_rs: Mat3<f64>,
    /// `m^i/‖m^i‖`
    pub m_rs: Vec3<f64>,
    /// Upper-triangular intrinsic matrix from `S_rs⁻¹ = C_m^b R`.
    pub r: Mat3<f64>,
    pub h: Vec3<f64>,
    /// Magnetometer misalignment `C_b^m`.
    pub c_b_m: Dcm<f64>,
    /// Roll, pitch, yaw of `C_b^m`, degrees.
    pub euler_deg: [f64; 3],
    pub eps_dps: Vec3<f64>,
    pub g_i: Vec3<f64>,
    pub inclination_deg: f64,
    pub anis_mag: f64,
    pub accel_accept_ratio: f64,
    pub mag_updates: usize,
    pub accel_accepted: usize,
}

/// Re-scales to a unit magnetic vector and splits `S_rs⁻¹` into misalignment
/// and intrinsic parts.
pub fn finalize(x: &CalibState<f64>, diag: &Diagnostics) -> Result<CalibResult> {
    if diag.mag_updates == 0 {
        return Err(Error::InvalidInput("no measurement updates were performed".into()));
    }
    let n = x.m_i.norm();
    if !(n >= 1e-6) {
        return Err(Error::DegenerateMagneticVector(n));
    }
    // (S, m^i) and (−S, −m^i) predict the same readings; keep det S > 0.
    let sign = if x.s.determinant() < 0.0 { -1.0 } else { 1.0 };
    let s_rs = x.s * (n * sign);
    let m_rs = x.m_i * (sign / n);
    let s_inv = s_rs.try_inverse().ok_or(Error::Singular("S_rs"))?;
    let (c_m_b, r) = qr_pos_diag(&s_inv)?;
    let c_b_m = c_m_b.transpose();
    Ok(CalibResult {
        s_rs,
        m_rs,
        r: r.into_inner(),
        h: x.h,
        c_b_m,
        euler_deg: dcm_to_euler(&c_b_m).to_degrees(),
        eps_dps: x.eps.map(f64::to_degrees),
        g_i: x.g_i,
        inclination_deg: inclination_deg(&m_rs, &x.g_i),
        anis_mag: diag.anis(),
        accel_accept_ratio: diag.accept_ratio(),
        mag_updates: diag.mag_updates,
        accel_accepted: diag.accel_accepted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekf::Cov;

    #[test]
    fn rescaling_normalizes_field() {
        let x = CalibState {
            c: Mat3::identity(),
            eps: Vec3::new(0.001, 0.0, 0.0),
            s: Mat3::new(0.5, 0.1, 0.0, 0.0, 0.6, 0.05, 0.0, 0.0, 0.4),
            h: Vec3::new(0.1, 0.2, 0.3),
            m_i: Vec3::new(1.2, 0.3, 1.5),
            g_i: Vec3::new(0.0, 0.0, 9.8),
            p: Cov::zeros(),
            t: 0.0,
        };
        let d = Diagnostics { nis_sum: 30.0, mag_updates: 10, ..Default::default() };
        let r = finalize(&x, &d).unwrap();
        assert!((r.m_rs.norm() - 1.0).abs() < 1e-12);
        assert!((0..3).all(|i| r.r[(i, i)] > 0.0));
        assert!((r.c_b_m.transpose() * r.r - r.s_rs.try_inverse().unwrap()).norm() < 1e-12);
        assert_eq!(r.anis_mag, 3.0);

        // (αS, m/α) gives the same re-scaled result
        let y = CalibState { s: x.s * 2.0, m_i: x.m_i / 2.0, ..x.clone() };
        let r2 = finalize(&y, &d).unwrap();
        assert!((r2.s_rs - r.s_rs).norm() < 1e-12);
        assert!((r2.m_rs - r.m_rs).norm() < 1e-12);

        // (−S, −m) is the same sensor model and must give a proper rotation
        let z = CalibState { s: -x.s, m_i: -x.m_i, ..x.clone() };
        let r3 = finalize(&z, &d).unwrap();
        assert!((r3.s_rs - r.s_rs).norm() < 1e-12);
        assert!((r3.c_b_m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn requires_an_update() {
        let x = CalibState {
            c: Mat3::identity(),
            eps: Vec3::zeros(),
            s: Mat3::identity(),
            h: Vec3::zeros(),
            m_i: Vec3::x(),
            g_i: Vec3::z(),
            p: Cov::zeros(),
            t: 0.0,
        };
        assert!(finalize(&x, &Diagnostics::default()).is_err());
        let d = Diagnostics { mag_updates: 1, ..Default::default() };
        let tiny = CalibState { m_i: Vec3::new(1e-9, 0.0, 0.0), ..x };
        assert!(matches!(finalize(&tiny, &d), Err(Error::DegenerateMagneticVector(_))));
    }
}
