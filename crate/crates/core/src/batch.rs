//! Closed-form batch calibrators.
//!
//! These solve the calibration from a finished stream without a filter:
//! - [`fit_intrinsic`]: attitude-independent ellipsoid fit for `(R, h)`;
//! - [`solve_alignment`]: misalignment `C_b^m` and gyro bias from the rotation
//!   of the calibrated field `y* = R(y_m − h)`;
//! - [`solve_bias_from_accel`] and [`solve_full_thm22`]: the accelerometer route that
//!   recovers `S`, `h`, `m^i`, `ε` and `g^i` together.
//!
//! They are used standalone and as cross-checks on the Kalman filter.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observability::{row_m, row_w, row_y};
use crate::scalar::Real;
use crate::so3::{nearest_rotation, orthonormalize, skew, unvec_col, Dcm, Mat3, UpperTriangular3, Vec3};

/// Intrinsic magnetometer parameters: `‖R(y_m − h)‖ = 1`.
#[derive(Clone, Copy, Debug)]
pub struct IntrinsicParams<T: Real> {
    pub r: UpperTriangular3<T>,
    pub h: Vec3<T>,
}

impl<T: Real> IntrinsicParams<T> {
    pub fn apply(&self, y: &Vec3<T>) -> Vec3<T> {
        self.r.matrix() * (y - self.h)
    }
}

/// Cross-sensor misalignment and gyro bias.
#[derive(Clone, Copy, Debug)]
pub struct AlignmentParams<T: Real> {
    /// Rotation from body to magnetometer frame, projected onto SO(3).
    pub c_b_m: Dcm<T>,
    /// Gyro bias from the unprojected solve, rad/s.
    pub eps: Vec3<T>,
    /// Gyro bias recovered with the projected rotation instead.
    pub eps_projected: Vec3<T>,
    /// Unconstrained 3×3 block of the linear solve.
    pub c_b_m_raw: Mat3<T>,
}

/// Finite-difference stencil used for time derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivative {
    /// `(f₊₁ − f₋₁) / 2Δt`
    Central3,
    /// `(−f₊₂ + 8f₊₁ − 8f₋₁ + f₋₂) / 12Δt`
    #[default]
    Central5,
}

impl Derivative {
    pub fn half_width(self) -> usize {
        match self {
            Derivative::Central3 => 1,
            Derivative::Central5 => 2,
        }
    }

    /// Derivative at index `k`, or `None` too close to the ends.
    pub fn at<T: Real>(self, f: &[Vec3<T>], k: usize, dt: f64) -> Option<Vec3<T>> {
        let w = self.half_width();
        if k < w || k + w >= f.len() {
            return None;
        }
        Some(match self {
            Derivative::Central3 => (f[k + 1] - f[k - 1]) / T::lit(2.0 * dt),
            Derivative::Central5 => {
                (f[k - 2] - f[k + 2] + (f[k + 1] - f[k - 1]) * T::lit(8.0)) / T::lit(12.0 * dt)
            }
        })
    }
}

fn sorted_eigen<T: Real, const N: usize>(
    evs: SVector<T, N>,
) -> Vec<(usize, T)> {
    let mut idx: Vec<(usize, T)> = evs.iter().copied().enumerate().collect();
    idx.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    idx
}

/// Attitude-independent ellipsoid fit.
///
/// Builds `G_Y = Σ Y*ᵀY*`, takes the eigenvector of its smallest eigenvalue as
/// `z* = [A', b', c']` and de-scales it: `h = A'⁻¹b'`, `α = b'ᵀA'⁻¹b' − c'`,
/// `A = A'/α`, `R = chol(A)ᵀ`. More than one eigenvalue below `tol · largest`
/// means the data do not pin down the ellipsoid.
pub fn fit_intrinsic<T: Real>(mags: &[Vec3<T>], tol: f64) -> Result<IntrinsicParams<T>> {
    if mags.len() < 9 {
        return Err(Error::InvalidInput("need at least 9 magnetometer samples".into()));
    }
    let mut g = SMatrix::<T, 10, 10>::zeros();
    for y in mags {
        let row = row_y(y);
        g += row * row.transpose();
    }
    g = (g + g.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(g);
    let order = sorted_eigen(eig.eigenvalues);
    let max = order[9].1;
    let zeros = order.iter().filter(|(_, e)| *e <= T::lit(tol) * max).count();
    if zeros > 1 {
        return Err(Error::RankDeficient { found: zeros });
    }
    let mut z: SVector<T, 10> = eig.eigenvectors.column(order[0].0).into_owned();
    let unpack = |z: &SVector<T, 10>| {
        let a = Mat3::new(z[0], z[1], z[2], z[1], z[3], z[4], z[2], z[4], z[5]);
        (a, Vec3::new(z[6], z[7], z[8]), z[9])
    };
    let (mut a_p, mut b_p, mut c_p) = unpack(&z);
    let a_inv = a_p.try_inverse().ok_or(Error::IndefiniteQuadric)?;
    let mut alpha = b_p.dot(&(a_inv * b_p)) - c_p;
    if alpha < T::zero() {
        z = -z;
        (a_p, b_p, c_p) = unpack(&z);
        alpha = -alpha;
    }
    let _ = c_p;
    if !(alpha > T::zero()) {
        return Err(Error::IndefiniteQuadric);
    }
    let h = a_p.try_inverse().ok_or(Error::IndefiniteQuadric)? * b_p;
    let a = a_p / alpha;
    let chol = a.cholesky().ok_or(Error::IndefiniteQuadric)?;
    let mut r = chol.l().transpose();
    r[(1, 0)] = T::zero();
    r[(2, 0)] = T::zero();
    r[(2, 1)] = T::zero();
    Ok(IntrinsicParams { r: UpperTriangular3::new(r)?, h })
}

/// Misalignment and gyro bias from `ẏ* = (y*×) C_b^m (ω − ε)`.
///
/// Solves the normal equations of `ẏ* = W η`, `η = [vec(C_b^m); C_b^m ε]`,
/// over uniformly sampled `(y*, ω)`. The 3×3 block is projected onto SO(3);
/// the bias uses the inverse of the unprojected block.
pub fn solve_alignment<T: Real>(
    y_star: &[Vec3<T>],
    omega: &[Vec3<T>],
    dt: f64,
    scheme: Derivative,
    tol: f64,
) -> Result<AlignmentParams<T>> {
    if y_star.len() != omega.len() {
        return Err(Error::InvalidInput("y* and ω lengths differ".into()));
    }
    let mut g = SMatrix::<T, 12, 12>::zeros();
    let mut rhs = SVector::<T, 12>::zeros();
    for k in 0..y_star.len() {
        let Some(dy) = scheme.at(y_star, k, dt) else { continue };
        let w = row_w(&y_star[k], &omega[k]);
        g += w.transpose() * w;
        rhs += w.transpose() * dy;
    }
    g = (g + g.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(g);
    let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(max > T::zero()) || min <= T::lit(tol) * max {
        return Err(Error::Singular("∫WᵀW dt"));
    }
    let eta = g.cholesky().ok_or(Error::Singular("∫WᵀW dt"))?.solve(&rhs);
    let raw = unvec_col(&eta.fixed_rows::<9>(0).into_owned());
    let ce: Vec3<T> = eta.fixed_rows::<3>(9).into_owned();
    let c_b_m = nearest_rotation(&raw)?;
    let raw_inv = raw.try_inverse().ok_or(Error::Singular("misalignment block"))?;
    Ok(AlignmentParams { c_b_m, eps: raw_inv * ce, eps_projected: c_b_m.transpose() * ce, c_b_m_raw: raw })
}

/// Gyro bias from the rotation of the specific-force vector.
///
/// From `ẏ_a = −(ω − ε) × y_a` the residual `ẏ_a + ω × y_a = −(y_a×) ε`, so
/// `ε` solves `Σ(‖y_a‖²I − y_a y_aᵀ) ε = Σ y_a × (ẏ_a + ω × y_a)`. The system is
/// rejected when `Σ y_a y_aᵀ` is singular at `tol`.
pub fn solve_bias_from_accel<T: Real>(
    accel: &[Vec3<T>],
    omega: &[Vec3<T>],
    dt: f64,
    scheme: Derivative,
    tol: f64,
) -> Result<Vec3<T>> {
    if accel.len() != omega.len() {
        return Err(Error::InvalidInput("y_a and ω lengths differ".into()));
    }
    let mut g_a = Mat3::<T>::zeros();
    let mut normal = Mat3::<T>::zeros();
    let mut rhs = Vec3::<T>::zeros();
    for k in 0..accel.len() {
        let Some(dy) = scheme.at(accel, k, dt) else { continue };
        let y = accel[k];
        let resid = dy + omega[k].cross(&y);
        let k_y = skew(&y);
        g_a += y * y.transpose();
        normal += k_y.transpose() * k_y;
        rhs -= k_y.transpose() * resid;
    }
    let eig = g_a.symmetric_eigenvalues();
    if !(eig.max() > T::zero()) || eig.min() <= T::lit(tol) * eig.max() {
        return Err(Error::Singular("∫y_a y_aᵀ dt"));
    }
    normal.try_inverse().map(|n| n * rhs).ok_or(Error::Singular("accelerometer normal matrix"))
}

/// Attitude integration rule for gyro streams.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `C ← C (I + Δt ω̄×)` re-projected, `ω̄` the mean of the bracketing samples.
    FirstOrder,
    /// Classical RK4 with the mid-step rate from cubic interpolation.
    #[default]
    Rk4,
}

/// Integrates `C_b(t)^i` from `C = I` at the first sample.
pub fn integrate_gyro<T: Real>(
    gyro: &[Vec3<T>],
    bias: &Vec3<T>,
    dt: f64,
    method: Integrator,
) -> Vec<Dcm<T>> {
    let n = gyro.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let w: Vec<Vec3<T>> = gyro.iter().map(|g| g - bias).collect();
    let h = T::lit(dt);
    let half = T::lit(0.5);
    let mut c: Dcm<T> = Mat3::identity();
    out.push(c);
    for k in 1..n {
        let (w0, w1) = (w[k - 1], w[k]);
        c = match method {
            Integrator::FirstOrder => c * (Mat3::identity() + skew(&((w0 + w1) * half)) * h),
            Integrator::Rk4 => {
                let wm = if k >= 2 && k + 1 < n {
                    (w0 * T::lit(9.0) + w1 * T::lit(9.0) - w[k - 2] - w[k + 1]) / T::lit(16.0)
                } else {
                    (w0 + w1) * half
                };
                let f = |c: &Dcm<T>, w: &Vec3<T>| c * skew(w);
                let k1 = f(&c, &w0);
                let k2 = f(&(c + k1 * (h * half)), &wm);
                let k3 = f(&(c + k2 * (h * half)), &wm);
                let k4 = f(&(c + k3 * h), &w1);
                c + (k1 + k2 * T::lit(2.0) + k3 * T::lit(2.0) + k4) * (h / T::lit(6.0))
            }
        };
        c = orthonormalize(&c);
        out.push(c);
    }
    out
}

/// Everything recovered by the accelerometer route.
#[derive(Clone, Copy, Debug)]
pub struct FullSolution<T: Real> {
    pub s: Mat3<T>,
    pub h: Vec3<T>,
    /// Unit magnetic vector in the inertial frame.
    pub m_i: Vec3<T>,
    pub eps: Vec3<T>,
    pub g_i: Vec3<T>,
}

/// Joint solve for `S`, `h`, `m^i`, `ε`, `g^i` with `C_b(0)^i = I`.
///
/// `κ = [vec(S⁻¹); S⁻¹h; m^i]` is the null vector of `Σ MᵀM`, scaled to
/// `‖m^i‖ = 1` with the sign that makes `det(S⁻¹) > 0`.
pub fn solve_full_thm22<T: Real>(
    gyro: &[Vec3<T>],
    accel: &[Vec3<T>],
    mags: &[Vec3<T>],
    dt: f64,
    scheme: Derivative,
    integrator: Integrator,
    tol: f64,
) -> Result<FullSolution<T>> {
    if gyro.len() != accel.len() || gyro.len() != mags.len() {
        return Err(Error::InvalidInput("stream lengths differ".into()));
    }
    let eps = solve_bias_from_accel(accel, gyro, dt, scheme, tol)?;
    let attitude = integrate_gyro(gyro, &eps, dt, integrator);
    let mut g = SMatrix::<T, 15, 15>::zeros();
    for (y, c) in mags.iter().zip(&attitude) {
        let m = row_m(y, c);
        g += m.transpose() * m;
    }
    g = (g + g.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(g);
    let order = sorted_eigen(eig.eigenvalues);
    let max = order[14].1;
    let zeros = order.iter().filter(|(_, e)| *e <= T::lit(tol) * max).count();
    if zeros > 1 {
        return Err(Error::RankDeficient { found: zeros });
    }
    let mut kappa: SVector<T, 15> = eig.eigenvectors.column(order[0].0).into_owned();
    let m_norm = kappa.fixed_rows::<3>(12).norm();
    if !(m_norm > T::zero()) {
        return Err(Error::DegenerateMagneticVector(m_norm.as_f64()));
    }
    kappa /= m_norm;
    let mut s_inv = unvec_col(&kappa.fixed_rows::<9>(0).into_owned());
    if s_inv.determinant() < T::zero() {
        kappa = -kappa;
        s_inv = -s_inv;
    }
    let s = s_inv.try_inverse().ok_or(Error::Singular("recovered S⁻¹"))?;
    let h = s * kappa.fixed_rows::<3>(9).into_owned();
    let m_i = kappa.fixed_rows::<3>(12).into_owned();
    let n = T::lit(accel.len() as f64);
    let g_i = accel.iter().zip(&attitude).fold(Vec3::zeros(), |acc, (y, c)| acc - c * y) / n;
    Ok(FullSolution { s, h, m_i, eps, g_i })
}

/// Inclination (dip) angle in degrees: `90 − acos(m̂ᵀ ĝ)`.
pub fn inclination_deg<T: Real>(m: &Vec3<T>, g: &Vec3<T>) -> f64 {
    let c = (m.normalize().dot(&g.normalize())).as_f64().clamp(-1.0, 1.0);
    90.0 - c.acos().to_degrees()
}
