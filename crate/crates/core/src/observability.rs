//! Observability Gramians for the two global-observability conditions.
//!
//! - `G_Y = ∫ Y*ᵀY* dt` (10×10) must have exactly one zero eigenvalue: the
//!   ellipsoid constraint `‖R(y_m − h)‖ = 1` then has a unique solution.
//! - `G_W = ∫ WᵀW dt` (12×12) must be nonsingular: misalignment and gyro
//!   bias follow from the rotation of the calibrated field.
//! - `G_A = ∫ y_a y_aᵀ dt` (3×3) must be nonsingular for the accelerometer route.
//! - `G_M = ∫ MᵀM dt` (15×15) must have exactly one zero eigenvalue.
//!
//! Row conventions: the unique entries of a symmetric `A` are ordered
//! `(A₁₁, A₁₂, A₁₃, A₂₂, A₂₃, A₃₃)` with off-diagonal columns doubled;
//! `vec(·)` is column-major.

use std::fmt;

use nalgebra::{DMatrix, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::so3::{orthonormalize, skew, Dcm, Mat3, Vec3};
use crate::sim::SensorSample;

pub type RowY<T> = SVector<T, 10>;
pub type BlockW<T> = SMatrix<T, 3, 12>;
pub type BlockM<T> = SMatrix<T, 3, 15>;

/// Default relative threshold below which an eigenvalue counts as zero on noisy data.
pub const DEFAULT_TOL: f64 = 1e-4;
/// Threshold used for noiseless data.
pub const NOISELESS_TOL: f64 = 1e-8;

/// Row of the linearised ellipsoid constraint for one magnetometer sample.
pub fn row_y<T: Real>(y: &Vec3<T>) -> RowY<T> {
    let two = T::lit(2.0);
    RowY::from_column_slice(&[
        y.x * y.x,
        two * y.x * y.y,
        two * y.x * y.z,
        y.y * y.y,
        two * y.y * y.z,
        y.z * y.z,
        -two * y.x,
        -two * y.y,
        -two * y.z,
        T::one(),
    ])
}

/// Parameter vector `z*` matching [`row_y`] for `A = RᵀR` and bias `h`.
pub fn z_star<T: Real>(a: &Mat3<T>, h: &Vec3<T>) -> RowY<T> {
    let ah = a * h;
    RowY::from_column_slice(&[
        a[(0, 0)],
        a[(0, 1)],
        a[(0, 2)],
        a[(1, 1)],
        a[(1, 2)],
        a[(2, 2)],
        ah.x,
        ah.y,
        ah.z,
        h.dot(&ah) - T::one(),
    ])
}

/// `[ωᵀ ⊗ (y*×), −(y*×)]`; times `[vec(C_b^m); C_b^m ε]` gives `ẏ*`.
pub fn row_w<T: Real>(y_star: &Vec3<T>, omega: &Vec3<T>) -> BlockW<T> {
    let k = skew(y_star);
    let mut w = BlockW::zeros();
    for j in 0..3 {
        w.fixed_view_mut::<3, 3>(0, 3 * j).copy_from(&(k * omega[j]));
    }
    w.fixed_view_mut::<3, 3>(0, 9).copy_from(&(-k));
    w
}

/// `[y_mᵀ ⊗ C_b^i, −C_b^i, −I₃]`; times `[vec(S⁻¹); S⁻¹h; m^i]` vanishes on noiseless data.
pub fn row_m<T: Real>(y: &Vec3<T>, c_b_i: &Dcm<T>) -> BlockM<T> {
    let mut m = BlockM::zeros();
    for j in 0..3 {
        m.fixed_view_mut::<3, 3>(0, 3 * j).copy_from(&(c_b_i * y[j]));
    }
    m.fixed_view_mut::<3, 3>(0, 9).copy_from(&(-c_b_i));
    m.fixed_view_mut::<3, 3>(0, 12).copy_from(&(-Mat3::identity()));
    m
}

/// Per-sample contributions; absent entries are skipped.
#[derive(Clone, Debug, Default)]
pub struct SampleRows<T: Real> {
    pub y: Option<RowY<T>>,
    pub w: Option<BlockW<T>>,
    pub a: Option<Vec3<T>>,
    pub m: Option<BlockM<T>>,
}

/// Running Gramian accumulators.
#[derive(Clone, Debug)]
pub struct GramianSet<T: Real> {
    pub g_y: SMatrix<T, 10, 10>,
    pub g_w: SMatrix<T, 12, 12>,
    pub g_a: SMatrix<T, 3, 3>,
    pub g_m: SMatrix<T, 15, 15>,
    pub t_span: f64,
    pub samples: usize,
}

impl<T: Real> Default for GramianSet<T> {
    fn default() -> Self {
        Self {
            g_y: SMatrix::zeros(),
            g_w: SMatrix::zeros(),
            g_a: SMatrix::zeros(),
            g_m: SMatrix::zeros(),
            t_span: 0.0,
            samples: 0,
        }
    }
}

fn symmetrize<T: Real, const N: usize>(m: &mut SMatrix<T, N, N>) {
    let half = T::lit(0.5);
    *m = (*m + m.transpose()) * half;
}

impl<T: Real> GramianSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `rowᵀ·row·dt` for each present row.
    pub fn accumulate(&mut self, rows: &SampleRows<T>, dt: f64) {
        debug_assert!(dt > 0.0);
        let dt_t = T::lit(dt);
        if let Some(y) = &rows.y {
            self.g_y += y * y.transpose() * dt_t;
            symmetrize(&mut self.g_y);
        }
        if let Some(w) = &rows.w {
            self.g_w += w.transpose() * w * dt_t;
            symmetrize(&mut self.g_w);
        }
        if let Some(a) = &rows.a {
            self.g_a += a * a.transpose() * dt_t;
            symmetrize(&mut self.g_a);
        }
        if let Some(m) = &rows.m {
            self.g_m += m.transpose() * m * dt_t;
            symmetrize(&mut self.g_m);
        }
        self.t_span += dt;
        self.samples += 1;
    }

    /// Sum of two accumulators over disjoint data.
    pub fn merge(&self, other: &Self) -> Self {
        Self {
            g_y: self.g_y + other.g_y,
            g_w: self.g_w + other.g_w,
            g_a: self.g_a + other.g_a,
            g_m: self.g_m + other.g_m,
            t_span: self.t_span + other.t_span,
            samples: self.samples + other.samples,
        }
    }

    /// log10 of the smallest over second-smallest eigenvalue of `G_Y`.
    pub fn log_ratio_y(&self) -> f64 {
        let ev = sorted_eigenvalues(&self.g_y);
        ratio(&ev).max(1e-300).log10()
    }

    pub fn report(&self, tol: f64) -> ObsvReport {
        let y = GramianDiag::one_zero("G_Y", &sorted_eigenvalues(&self.g_y), tol);
        let w = GramianDiag::nonsingular("G_W", &sorted_eigenvalues(&self.g_w), tol);
        let a = GramianDiag::nonsingular("G_A", &sorted_eigenvalues(&self.g_a), tol);
        let m = GramianDiag::one_zero("G_M", &sorted_eigenvalues(&self.g_m), tol);
        ObsvReport {
            tol,
            t_span: self.t_span,
            magnetometer_gyro: Verdict::both(w.verdict, y.verdict),
            accelerometer: Verdict::both(a.verdict, m.verdict),
            y,
            w,
            a,
            m,
            log_ratio_series: Vec::new(),
        }
    }
}

/// Ascending eigenvalues of the symmetrised matrix, as `f64`.
pub fn sorted_eigenvalues<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> Vec<f64> {
    let mut sym = *m;
    symmetrize(&mut sym);
    let dm = DMatrix::from_iterator(N, N, sym.iter().map(|x| x.as_f64()));
    let eig = SymmetricEigen::new(dm);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Eigenvalues below the roundoff level of the largest count as that level, so
/// two numerically zero eigenvalues give a ratio of one.
fn ratio(ev: &[f64]) -> f64 {
    let floor = ev[ev.len() - 1].abs() * f64::EPSILON * ev.len() as f64;
    let (a, b) = (ev[0].max(floor), ev[1].max(floor));
    if b <= 0.0 {
        1.0
    } else {
        (a / b).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Observable,
    Marginal,
    Unobservable,
}

impl Verdict {
    fn both(a: Verdict, b: Verdict) -> Verdict {
        use Verdict::*;
        match (a, b) {
            (Observable, Observable) => Observable,
            (Unobservable, _) | (_, Unobservable) => Unobservable,
            _ => Marginal,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Observable => "observable",
            Verdict::Marginal => "marginal",
            Verdict::Unobservable => "unobservable",
        })
    }
}

/// Eigen-diagnostics of one Gramian.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GramianDiag {
    pub name: String,
    pub eigenvalues: Vec<f64>,
    pub smallest: f64,
    /// Smallest over second-smallest eigenvalue, in [0, 1].
    pub ratio: f64,
    /// Number of eigenvalues above `tol · largest`.
    pub rank: usize,
    pub verdict: Verdict,
}

/// Margin factor separating a clear verdict from a marginal one.
const MARGIN: f64 = 100.0;

impl GramianDiag {
    fn base(name: &str, ev: &[f64], tol: f64) -> (Self, f64) {
        let max = ev.last().copied().unwrap_or(0.0).max(0.0);
        let rank = if max > 0.0 { ev.iter().filter(|e| **e > tol * max).count() } else { 0 };
        (
            Self {
                name: name.to_string(),
                eigenvalues: ev.to_vec(),
                smallest: ev[0],
                ratio: ratio(ev),
                rank,
                verdict: Verdict::Unobservable,
            },
            max,
        )
    }

    fn nonsingular(name: &str, ev: &[f64], tol: f64) -> Self {
        let (mut d, max) = Self::base(name, ev, tol);
        d.verdict = if max <= 0.0 || ev[0] <= tol * max {
            Verdict::Unobservable
        } else if ev[0] <= MARGIN * tol * max {
            Verdict::Marginal
        } else {
            Verdict::Observable
        };
        d
    }

    fn one_zero(name: &str, ev: &[f64], tol: f64) -> Self {
        let (mut d, max) = Self::base(name, ev, tol);
        let zeros = ev.len() - d.rank;
        d.verdict = if max <= 0.0 || zeros != 1 {
            Verdict::Unobservable
        } else if ev[1] <= MARGIN * tol * max {
            Verdict::Marginal
        } else {
            Verdict::Observable
        };
        d
    }

    /// Number of eigenvalues counted as zero.
    pub fn zero_count(&self) -> usize {
        self.eigenvalues.len() - self.rank
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObsvReport {
    pub tol: f64,
    pub t_span: f64,
    /// `G_W` nonsingular and `G_Y` with a single zero eigenvalue.
    pub magnetometer_gyro: Verdict,
    /// `G_A` nonsingular and `G_M` with a single zero eigenvalue.
    pub accelerometer: Verdict,
    pub y: GramianDiag,
    pub w: GramianDiag,
    pub a: GramianDiag,
    pub m: GramianDiag,
    /// `(t, log10 ratio of G_Y)` samples.
    pub log_ratio_series: Vec<(f64, f64)>,
}

impl fmt::Display for ObsvReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Observability over {:.2} s (zero threshold {:e} x largest)", self.t_span, self.tol)?;
        writeln!(f, "{:<6} {:>14} {:>12} {:>6} {:>6}  verdict", "matrix", "smallest", "ratio", "rank", "dim")?;
        for d in [&self.y, &self.w, &self.a, &self.m] {
            writeln!(
                f,
                "{:<6} {:>14.6e} {:>12.4e} {:>6} {:>6}  {}",
                d.name,
                d.smallest,
                d.ratio,
                d.rank,
                d.eigenvalues.len(),
                d.verdict
            )?;
        }
        writeln!(f, "magnetometer/gyro condition: {}", self.magnetometer_gyro)?;
        write!(f, "accelerometer condition:     {}", self.accelerometer)
    }
}

/// Inputs for building Gramians from a raw stream.
#[derive(Clone, Debug)]
pub struct ObserveOptions<T: Real> {
    /// Intrinsic parameters `(R, h)` used to form `y* = R(y_m − h)`. Without
    /// them the raw reading stands in for `y*`, which preserves the rank of `G_W`
    /// whenever the distortion is invertible.
    pub intrinsic: Option<(Mat3<T>, Vec3<T>)>,
    /// Gyro bias removed before integrating the attitude used by `G_M`.
    pub gyro_bias: Vec3<T>,
    /// Record `log10` of the `G_Y` ratio every this many samples (0 disables).
    pub record_every: usize,
}

impl<T: Real> Default for ObserveOptions<T> {
    fn default() -> Self {
        Self { intrinsic: None, gyro_bias: Vec3::zeros(), record_every: 100 }
    }
}

/// Accumulates all four Gramians over a stream.
///
/// The attitude for `G_M` starts at identity on the first sample and follows
/// the first-order rule `C ← C (I + dt (ω − ε)×)`.
pub fn observe_stream<T: Real>(
    samples: &[SensorSample<T>],
    opts: &ObserveOptions<T>,
) -> (GramianSet<T>, Vec<(f64, f64)>) {
    let mut g = GramianSet::new();
    let mut series = Vec::new();
    let mut c: Dcm<T> = Mat3::identity();
    for (k, s) in samples.iter().enumerate() {
        let dt = if k + 1 < samples.len() {
            samples[k + 1].t - s.t
        } else if k > 0 {
            s.t - samples[k - 1].t
        } else {
            1.0
        };
        if k > 0 {
            let h = T::lit(s.t - samples[k - 1].t);
            let omega = s.gyro - opts.gyro_bias;
            c = orthonormalize(&(c * (Mat3::identity() + skew(&omega) * h)));
        }
        let y_star = match &opts.intrinsic {
            Some((r, h)) => r * (s.mag - h),
            None => s.mag,
        };
        let rows = SampleRows {
            y: Some(row_y(&s.mag)),
            w: Some(row_w(&y_star, &(s.gyro))),
            a: Some(s.accel),
            m: Some(row_m(&s.mag, &c)),
        };
        g.accumulate(&rows, dt.max(f64::MIN_POSITIVE));
        if opts.record_every > 0 && (k + 1) % opts.record_every == 0 {
            series.push((s.t, g.log_ratio_y()));
        }
    }
    (g, series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{exp_so3, qr_pos_diag};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, s: f64) -> Vec3<f64> {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn row_y_basis_vector() {
        let r = row_y(&Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(r.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn row_y_identity_parameters() {
        let z = z_star(&Mat3::identity(), &Vec3::zeros());
        let y = Vec3::<f64>::new(0.3, -0.4, 1.2);
        assert_relative_eq!(row_y(&y).dot(&z), y.norm_squared() - 1.0, epsilon = 1e-15);
        let unit = y / y.norm();
        assert!(row_y(&unit).dot(&z).abs() < 1e-15);
    }

    #[test]
    fn row_y_vanishes_on_random_ellipsoids() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let r = Mat3::new(
                rng.random_range(0.6..1.6),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                0.0,
                rng.random_range(0.6..1.6),
                rng.random_range(-0.4..0.4),
                0.0,
                0.0,
                rng.random_range(0.6..1.6),
            );
            let h = rvec(&mut rng, 1.0);
            let u = rvec(&mut rng, 1.0).normalize();
            let y = r.try_inverse().unwrap() * u + h;
            let z = z_star(&(r.transpose() * r), &h);
            assert!(row_y(&y).dot(&z).abs() < 1e-10);
        }
    }

    #[test]
    fn row_w_matches_direct_rate_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let c = exp_so3(&rvec(&mut rng, 1.5));
            let eps = rvec(&mut rng, 0.01);
            let omega = rvec(&mut rng, 2.0);
            let y = rvec(&mut rng, 1.0);
            let mut eta = SVector::<f64, 12>::zeros();
            eta.fixed_rows_mut::<9>(0).copy_from(&crate::so3::vec_col(&c));
            eta.fixed_rows_mut::<3>(9).copy_from(&(c * eps));
            // direct evaluation: (y*×) C (ω − ε)
            let direct = y.cross(&(c * (omega - eps)));
            assert_relative_eq!(row_w(&y, &omega) * eta, direct, epsilon = 1e-12);
        }
        // with ω = 0 and no bias the identity misalignment gives zero
        let mut eta = SVector::<f64, 12>::zeros();
        eta.fixed_rows_mut::<9>(0).copy_from(&crate::so3::vec_col(&Mat3::identity()));
        assert_eq!(row_w(&Vec3::new(0.2, 0.5, -0.1), &Vec3::zeros()) * eta, Vec3::zeros());
    }

    fn kappa(s_inv: &Mat3<f64>, h: &Vec3<f64>, m_i: &Vec3<f64>) -> SVector<f64, 15> {
        let mut k = SVector::<f64, 15>::zeros();
        k.fixed_rows_mut::<9>(0).copy_from(&crate::so3::vec_col(s_inv));
        k.fixed_rows_mut::<3>(9).copy_from(&(s_inv * h));
        k.fixed_rows_mut::<3>(12).copy_from(m_i);
        k
    }

    #[test]
    fn row_m_identity_case_and_random_truth() {
        let m_i = Vec3::new(0.7, 0.0, 0.714);
        let k = kappa(&Mat3::identity(), &Vec3::zeros(), &m_i);
        assert_eq!(row_m(&m_i, &Mat3::identity()) * k, Vec3::zeros());

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = Mat3::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3));
        let h = rvec(&mut rng, 0.5);
        let s_inv = s.try_inverse().unwrap();
        let k = kappa(&s_inv, &h, &m_i);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let c = exp_so3(&rvec(&mut rng, 3.0));
            let y = s * c.transpose() * m_i + h;
            worst = worst.max((row_m(&y, &c) * k).amax());
            // linear in κ
            let scaled = row_m(&y, &c) * (k * 2.5) - (row_m(&y, &c) * k) * 2.5;
            assert!(scaled.amax() < 1e-12);
        }
        assert!(worst < 1e-10);
    }

    #[test]
    fn empty_set_is_unobservable() {
        let g = GramianSet::<f64>::new();
        let r = g.report(DEFAULT_TOL);
        assert_eq!(r.magnetometer_gyro, Verdict::Unobservable);
        assert_eq!(r.accelerometer, Verdict::Unobservable);
        assert!(g.g_y.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn null_vector_of_noiseless_ellipsoid_gramian() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let r = Mat3::new(1.2, 0.1, -0.2, 0.0, 0.9, 0.05, 0.0, 0.0, 1.05);
        let h = Vec3::new(-0.5, 0.1, 0.3);
        let r_inv = r.try_inverse().unwrap();
        let mut g = GramianSet::new();
        for _ in 0..2000 {
            let y = r_inv * rvec(&mut rng, 1.0).normalize() + h;
            g.accumulate(&SampleRows { y: Some(row_y(&y)), ..Default::default() }, 0.01);
        }
        let z = z_star(&(r.transpose() * r), &h);
        assert!((g.g_y * z).norm() < 1e-9 * g.g_y.norm() * z.norm());
        let d = g.report(NOISELESS_TOL).y;
        assert_eq!(d.zero_count(), 1);
        assert!(d.ratio < 1e-12);
    }

    #[test]
    fn merge_is_order_independent_and_eigs_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let rows: Vec<_> = (0..300)
            .map(|_| {
                let y = rvec(&mut rng, 1.0);
                let c = exp_so3(&rvec(&mut rng, 2.0));
                SampleRows {
                    y: Some(row_y(&y)),
                    w: Some(row_w(&y, &rvec(&mut rng, 1.0))),
                    a: Some(rvec(&mut rng, 9.8)),
                    m: Some(row_m(&y, &c)),
                }
            })
            .collect();
        let mut a = GramianSet::new();
        let mut b = GramianSet::new();
        let mut all = GramianSet::new();
        let mut prev = sorted_eigenvalues(&all.g_w);
        for (i, r) in rows.iter().enumerate() {
            if i % 2 == 0 { a.accumulate(r, 0.01) } else { b.accumulate(r, 0.01) }
            all.accumulate(r, 0.01);
            let ev = sorted_eigenvalues(&all.g_w);
            for (p, e) in prev.iter().zip(&ev) {
                assert!(*e >= *p - 1e-12 * ev[11].max(1.0));
            }
            prev = ev;
        }
        let ab = a.merge(&b);
        let ba = b.merge(&a);
        assert_relative_eq!(ab.g_m, ba.g_m, epsilon = 1e-12);
        assert_relative_eq!(ab.g_m, all.g_m, epsilon = 1e-9);
        assert_eq!(ab.samples, 300);
    }

    #[test]
    fn scaling_readings_keeps_zero_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let (q, r) = qr_pos_diag(&Mat3::new(1.1, 0.2, 0.0, -0.1, 0.9, 0.1, 0.05, 0.0, 1.0)).unwrap();
        let _ = q;
        let r_inv = r.matrix().try_inverse().unwrap();
        let pts: Vec<Vec3<f64>> = (0..1000).map(|_| r_inv * rvec(&mut rng, 1.0).normalize()).collect();
        for c in [1.0, 3.0, 0.2] {
            let mut g = GramianSet::new();
            for p in &pts {
                g.accumulate(&SampleRows { y: Some(row_y(&(p * c))), ..Default::default() }, 0.01);
            }
            assert_eq!(g.report(NOISELESS_TOL).y.zero_count(), 1, "scale {c}");
        }
    }
}
