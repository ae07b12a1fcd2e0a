//! Fixed-size rotation and linear-algebra helpers.
//!
//! Conventions used throughout the crate:
//! - `Dcm` values are proper rotation matrices; `C_b^i` maps body-frame
//!   coordinates into the inertial frame.
//! - `vec(·)` stacks columns (column-major), so `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
//! - Euler angles are aerospace Z-Y-X: `D = Rz(yaw) · Ry(pitch) · Rx(roll)`.
//! - Angles are radians internally; degree helpers exist only for I/O.

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Vec3<T> = Vector3<T>;
pub type Mat3<T> = Matrix3<T>;
/// Direction-cosine matrix. Always orthonormal with determinant +1.
pub type Dcm<T> = Matrix3<T>;

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew<T: Real>(v: &Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Rotation matrix `exp(skew(phi))` by Rodrigues' formula.
pub fn exp_so3<T: Real>(phi: &Vec3<T>) -> Dcm<T> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < T::lit(1e-12) {
        // second order series of sin(θ)/θ and (1 - cos θ)/θ²
        (
            T::one() - theta2 / T::lit(6.0),
            T::lit(0.5) - theta2 / T::lit(24.0),
        )
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of a rotation matrix (inverse of [`exp_so3`] for angles below π).
pub fn log_so3<T: Real>(d: &Dcm<T>) -> Vec3<T> {
    let cos = ((d.trace() - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
    let theta = cos.acos();
    let w = Vec3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]);
    if theta < T::lit(1e-8) {
        return w * T::lit(0.5);
    }
    if theta > T::pi() - T::lit(1e-6) {
        // near π: axis from the largest diagonal of (D + I)/2
        let b = (d + Mat3::identity()) * T::lit(0.5);
        let i = (0..3)
            .max_by(|&a, &c| b[(a, a)].partial_cmp(&b[(c, c)]).unwrap())
            .unwrap();
        let mut axis = b.column(i).into_owned();
        axis /= axis.norm();
        return axis * theta;
    }
    w * (theta / (T::lit(2.0) * theta.sin()))
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_distance<T: Real>(a: &Dcm<T>, b: &Dcm<T>) -> T {
    log_so3(&(a.transpose() * b)).norm()
}

/// Upper-triangular 3×3 matrix with strictly positive diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpperTriangular3<T: Real>(Mat3<T>);

impl<T: Real> UpperTriangular3<T> {
    pub fn new(m: Mat3<T>) -> Result<Self> {
        let below = [m[(1, 0)], m[(2, 0)], m[(2, 1)]];
        if below.iter().any(|x| *x != T::zero()) {
            return Err(Error::InvalidInput("entries below the diagonal must be zero".into()));
        }
        if (0..3).any(|i| m[(i, i)] <= T::zero()) {
            return Err(Error::InvalidInput("diagonal entries must be positive".into()));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Mat3<T> {
        &self.0
    }

    pub fn into_inner(self) -> Mat3<T> {
        self.0
    }
}

fn singular_values<T: Real>(a: &Mat3<T>) -> Vec3<T> {
    a.singular_values()
}

/// QR factorisation `A = Q R` with `diag(R) > 0`.
///
/// `Q` is a rotation whenever `det(A) > 0`.
pub fn qr_pos_diag<T: Real>(a: &Mat3<T>) -> Result<(Dcm<T>, UpperTriangular3<T>)> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("qr input"));
    }
    let sv = singular_values(a);
    if sv.min() < T::lit(1e-12) * sv.max() || sv.max() == T::zero() {
        return Err(Error::Singular("qr_pos_diag input"));
    }
    let qr = a.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..3 {
        if r[(i, i)] < T::zero() {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    // Householder leaves round-off below the diagonal at exactly zero, but be explicit.
    r[(1, 0)] = T::zero();
    r[(2, 0)] = T::zero();
    r[(2, 1)] = T::zero();
    Ok((q, UpperTriangular3(r)))
}

/// Closest rotation to `a` in the Frobenius norm (orthogonal Procrustes).
pub fn nearest_rotation<T: Real>(a: &Mat3<T>) -> Result<Dcm<T>> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rotation projection input"));
    }
    let svd = a.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateProjection),
    };
    let sv = svd.singular_values;
    let max = sv.max();
    let tiny = T::lit(1e-12) * max;
    if max == T::zero() || sv.iter().filter(|s| **s <= tiny).count() >= 2 {
        return Err(Error::DegenerateProjection);
    }
    let imin = sv.imin();
    let mut d = Vec3::from_element(T::one());
    if (u * v_t).determinant() < T::zero() {
        d[imin] = -T::one();
    }
    Ok(u * Mat3::from_diagonal(&d) * v_t)
}

/// Re-projects a nearly orthonormal matrix onto SO(3).
pub fn orthonormalize<T: Real>(c: &Dcm<T>) -> Dcm<T> {
    nearest_rotation(c).unwrap_or(*c)
}

/// Z-Y-X Euler angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Euler<T> {
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
    /// Set when `|D₃₁| > 1 − 1e-9`; roll is then fixed to zero.
    #[serde(default)]
    pub gimbal_lock: bool,
}

impl<T: Real> Euler<T> {
    pub fn new(roll: T, pitch: T, yaw: T) -> Self {
        Self { roll, pitch, yaw, gimbal_lock: false }
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(
            T::lit(roll.to_radians()),
            T::lit(pitch.to_radians()),
            T::lit(yaw.to_radians()),
        )
    }

    pub fn to_degrees(&self) -> [f64; 3] {
        [
            self.roll.as_f64().to_degrees(),
            self.pitch.as_f64().to_degrees(),
            self.yaw.as_f64().to_degrees(),
        ]
    }
}

pub fn dcm_to_euler<T: Real>(d: &Dcm<T>) -> Euler<T> {
    let s = d[(2, 0)];
    if s.abs() > T::one() - T::lit(1e-9) {
        let pitch = if s < T::zero() { T::frac_pi_2() } else { -T::frac_pi_2() };
        let yaw = (-d[(0, 1)]).atan2(d[(1, 1)]);
        return Euler { roll: T::zero(), pitch, yaw, gimbal_lock: true };
    }
    Euler {
        roll: d[(2, 1)].atan2(d[(2, 2)]),
        pitch: (-s).asin(),
        yaw: d[(1, 0)].atan2(d[(0, 0)]),
        gimbal_lock: false,
    }
}

pub fn euler_to_dcm<T: Real>(e: &Euler<T>) -> Dcm<T> {
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sy, cy) = e.yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Column-major `vec(·)`.
pub fn vec_col<T: Real>(m: &Mat3<T>) -> SVector<T, 9> {
    SVector::<T, 9>::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_col`].
pub fn unvec_col<T: Real>(v: &SVector<T, 9>) -> Mat3<T> {
    Mat3::from_column_slice(v.as_slice())
}

/// Largest deviation from orthonormality, `‖DᵀD − I‖_F`.
pub fn orthonormality_error<T: Real>(d: &Mat3<T>) -> T {
    (d.transpose() * d - Mat3::identity()).norm()
}
