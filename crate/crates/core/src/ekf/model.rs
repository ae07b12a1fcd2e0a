//! State, error-state layout and measurement models.

use nalgebra::{SMatrix, SVector};

use crate::scalar::Real;
use crate::so3::{exp_so3, log_so3, skew, Dcm, Mat3, Vec3};

/// Error-state dimension.
pub const DIM: usize = 24;
/// Offsets into the error state `[ψ, δε, vec(δS), δh, δm^i, δg^i]`.
pub const PSI: usize = 0;
pub const EPS: usize = 3;
pub const S: usize = 6;
pub const H: usize = 15;
pub const MI: usize = 18;
pub const GI: usize = 21;

pub type ErrVec<T> = SVector<T, DIM>;
pub type Cov<T> = SMatrix<T, DIM, DIM>;
pub type MeasJac<T> = SMatrix<T, 3, DIM>;

/// Filter mean and covariance.
///
/// Attitude error `ψ` is defined by `Ĉ = (I − ψ×)C`; the other errors are
/// `x̂ − x`.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibState<T: Real> {
    /// Body-to-inertial attitude `C_b^i`; the inertial frame is the body frame at start.
    pub c: Dcm<T>,
    /// Gyro bias, rad/s.
    pub eps: Vec3<T>,
    pub s: Mat3<T>,
    pub h: Vec3<T>,
    pub m_i: Vec3<T>,
    /// Gravity in the inertial frame, m/s².
    pub g_i: Vec3<T>,
    pub p: Cov<T>,
    pub t: f64,
}

impl<T: Real> CalibState<T> {
    /// `S·Cᵀ·m^i + h`
    pub fn predict_mag(&self) -> Vec3<T> {
        self.s * (self.c.transpose() * self.m_i) + self.h
    }

    /// `−Cᵀ·g^i`
    pub fn predict_accel(&self) -> Vec3<T> {
        -(self.c.transpose() * self.g_i)
    }

    /// `[−S·Cᵀ(m^i×), 0, (Cᵀm^i)ᵀ⊗I₃, I₃, S·Cᵀ, 0]`
    pub fn jac_mag(&self) -> MeasJac<T> {
        let ct = self.c.transpose();
        let v = ct * self.m_i;
        let mut j = MeasJac::zeros();
        j.fixed_view_mut::<3, 3>(0, PSI).copy_from(&(-(self.s * ct * skew(&self.m_i))));
        for col in 0..3 {
            j.fixed_view_mut::<3, 3>(0, S + 3 * col).copy_from(&(Mat3::identity() * v[col]));
        }
        j.fixed_view_mut::<3, 3>(0, H).copy_from(&Mat3::identity());
        j.fixed_view_mut::<3, 3>(0, MI).copy_from(&(self.s * ct));
        j
    }

    /// `[Cᵀ(g^i×), 0, 0, 0, 0, −Cᵀ]`
    pub fn jac_accel(&self) -> MeasJac<T> {
        let ct = self.c.transpose();
        let mut j = MeasJac::zeros();
        j.fixed_view_mut::<3, 3>(0, PSI).copy_from(&(ct * skew(&self.g_i)));
        j.fixed_view_mut::<3, 3>(0, GI).copy_from(&(-ct));
        j
    }

    /// Continuous-time error dynamics. The only mean coupling is `ψ̇ = C·δε`.
    pub fn f_matrix(&self) -> Cov<T> {
        let mut f = Cov::zeros();
        f.fixed_view_mut::<3, 3>(PSI, EPS).copy_from(&self.c);
        f
    }

    /// Noise input matrix for `[n_g, n_ε, n_mi, n_gi]`.
    pub fn g_matrix(&self) -> SMatrix<T, DIM, 12> {
        let mut g = SMatrix::<T, DIM, 12>::zeros();
        g.fixed_view_mut::<3, 3>(PSI, 0).copy_from(&self.c);
        g.fixed_view_mut::<3, 3>(EPS, 3).copy_from(&Mat3::identity());
        g.fixed_view_mut::<3, 3>(MI, 6).copy_from(&Mat3::identity());
        g.fixed_view_mut::<3, 3>(GI, 9).copy_from(&Mat3::identity());
        g
    }

    /// Moves the mean by an error-state increment: `C ← exp(−ψ×)C`, vectors added.
    ///
    /// Applying `K·ν` this way is the filter correction; applying a small `δx`
    /// produces the state whose error relative to `self` is `δx`.
    pub fn boxplus(&mut self, dx: &ErrVec<T>) {
        let psi: Vec3<T> = dx.fixed_rows::<3>(PSI).into_owned();
        self.c = exp_so3(&(-psi)) * self.c;
        self.eps += dx.fixed_rows::<3>(EPS);
        for col in 0..3 {
            let d: Vec3<T> = dx.fixed_rows::<3>(S + 3 * col).into_owned();
            let mut c = self.s.column_mut(col);
            c += d;
        }
        self.h += dx.fixed_rows::<3>(H);
        self.m_i += dx.fixed_rows::<3>(MI);
        self.g_i += dx.fixed_rows::<3>(GI);
    }

    /// Error state of `self` relative to `truth`.
    pub fn error_from(&self, truth: &Self) -> ErrVec<T> {
        let mut e = ErrVec::zeros();
        let psi = -log_so3(&(self.c * truth.c.transpose()));
        e.fixed_rows_mut::<3>(PSI).copy_from(&psi);
        e.fixed_rows_mut::<3>(EPS).copy_from(&(self.eps - truth.eps));
        for col in 0..3 {
            e.fixed_rows_mut::<3>(S + 3 * col).copy_from(&(self.s.column(col) - truth.s.column(col)));
        }
        e.fixed_rows_mut::<3>(H).copy_from(&(self.h - truth.h));
        e.fixed_rows_mut::<3>(MI).copy_from(&(self.m_i - truth.m_i));
        e.fixed_rows_mut::<3>(GI).copy_from(&(self.g_i - truth.g_i));
        e
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter()
            .chain(self.eps.iter())
            .chain(self.s.iter())
            .chain(self.h.iter())
            .chain(self.m_i.iter())
            .chain(self.g_i.iter())
            .chain(self.p.iter())
            .all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, s: f64) -> Vec3<f64> {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    pub(crate) fn random_state(rng: &mut ChaCha8Rng) -> CalibState<f64> {
        CalibState {
            c: exp_so3(&rvec(rng, 3.0)),
            eps: rvec(rng, 0.01),
            s: Mat3::identity() + Mat3::from_fn(|_, _| rng.random_range(-0.4..0.4)),
            h: rvec(rng, 1.0),
            m_i: rvec(rng, 1.0),
            g_i: rvec(rng, 10.0),
            p: Cov::zeros(),
            t: 0.0,
        }
    }

    fn check_jacobian(
        pred: impl Fn(&CalibState<f64>) -> Vec3<f64>,
        jac: impl Fn(&CalibState<f64>) -> MeasJac<f64>,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let j = jac(&x);
            let mut fd = MeasJac::<f64>::zeros();
            let d = 1e-6;
            for i in 0..DIM {
                let mut e = ErrVec::zeros();
                e[i] = d;
                let mut xp = x.clone();
                xp.boxplus(&e);
                let mut xm = x.clone();
                xm.boxplus(&(-e));
                fd.set_column(i, &((pred(&xp) - pred(&xm)) / (2.0 * d)));
            }
            worst = worst.max((fd - j).norm() / j.norm());
        }
        worst
    }

    #[test]
    fn mag_jacobian_matches_finite_differences() {
        let err = check_jacobian(|x| x.predict_mag(), |x| x.jac_mag());
        assert!(err < 1e-5, "{err:e}");
    }

    #[test]
    fn accel_jacobian_matches_finite_differences() {
        let err = check_jacobian(|x| x.predict_accel(), |x| x.jac_accel());
        assert!(err < 1e-5, "{err:e}");
    }

    #[test]
    fn error_from_inverts_boxplus() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_state(&mut rng);
        let mut dx = ErrVec::<f64>::zeros();
        for i in 0..DIM {
            dx[i] = rng.random_range(-0.1..0.1);
        }
        let mut y = x.clone();
        y.boxplus(&dx);
        assert!((y.error_from(&x) - dx).norm() < 1e-12);
    }
}
