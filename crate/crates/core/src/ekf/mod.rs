//! Error-state Kalman filter for joint magnetometer, misalignment and gyro-bias calibration.
//!
//! Mean state: inertial attitude, gyro bias, magnetometer `S` and `h`, and the
//! constant inertial magnetic and gravity vectors. The error state has 24
//! entries laid out as in [`model`]. Each sample propagates the attitude with
//! the de-biased gyro, updates with the magnetometer, and optionally updates
//! with the accelerometer when its norm is close to local gravity.

mod model;
mod result;

pub use model::{CalibState, Cov, ErrVec, MeasJac, DIM, EPS, GI, H, MI, PSI, S};
pub use result::{finalize, CalibResult};

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::batch::{fit_intrinsic, solve_alignment, Derivative};
use crate::error::{Error, Result};
use crate::observability::{row_y, sorted_eigenvalues, DEFAULT_TOL};
use crate::scalar::Real;
use crate::sim::{NoiseConfig, SensorSample};
use crate::so3::{orthonormalize, skew, Dcm, Mat3, Vec3};

/// Initial standard deviations of the uncertain states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitStd {
    /// Gyro bias, deg/s.
    pub bias_dps: f64,
    pub s: f64,
    pub h: f64,
    pub m_i: f64,
    /// Gravity vector, m/s².
    pub g_i: f64,
}

impl Default for InitStd {
    fn default() -> Self {
        Self { bias_dps: 5.0, s: 0.1, h: 1.0, m_i: 0.5, g_i: 1.0 }
    }
}

/// Filter settings. Noise is stored in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    /// Not read from files: run configurations give noise in degree units.
    #[serde(skip, default = "reference_noise")]
    pub noise: NoiseConfig,
    /// Accelerometer gate: accept when `|‖y_a‖ − g_local| < t_md`.
    pub t_md: f64,
    pub init_std: InitStd,
    pub g_local: f64,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    /// Starts at the first sustained motion after `start`.
    pub auto_start: bool,
    pub use_accel: bool,
    pub s_init: Mat3<f64>,
    /// Re-runs the filter with `S` initialised from the first pass.
    pub two_pass: bool,
    /// Keep per-sample diagnostics.
    pub record_history: bool,
    /// Relinearizations per magnetometer update; 1 is the plain EKF.
    pub mag_iterations: usize,
    /// Warm start: filter this many seconds, then restart from the window
    /// start with the resulting bias, `S`, `h`, `m^i` and `g^i` and the initial
    /// covariance. Zero disables it.
    pub warm_start: f64,
    /// Number of warm-start passes, each seeded by the previous one.
    pub warm_rounds: usize,
    /// Magnetometer relinearizations used inside warm-start passes.
    pub warm_iterations: usize,
    /// A pass whose magnetometer ANIS exceeds this is treated as diverged and
    /// re-run with one more warm-start relinearization. Zero disables it.
    pub divergence_anis: f64,
    /// Maximum number of such re-runs. The last one starts from a batch
    /// ellipsoid and alignment solve over the warm-start span.
    pub max_retries: usize,
}

fn reference_noise() -> NoiseConfig {
    NoiseConfig::reference(0.03)
}

impl Default for EkfConfig {
    fn default() -> Self {
        let t_md = 0.03;
        Self {
            noise: NoiseConfig::reference(t_md),
            t_md,
            init_std: InitStd::default(),
            g_local: 9.8,
            start: None,
            stop: None,
            auto_start: true,
            use_accel: true,
            s_init: Mat3::identity(),
            two_pass: false,
            record_history: true,
            mag_iterations: 1,
            warm_start: 20.0,
            warm_rounds: 3,
            warm_iterations: 1,
            divergence_anis: 10.0,
            max_retries: 2,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if !(self.t_md > 0.0) || !self.t_md.is_finite() {
            return Err(Error::Config("t_md must be positive".into()));
        }
        let s = &self.init_std;
        if [s.bias_dps, s.s, s.h, s.m_i, s.g_i].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("initial standard deviations must be non-negative".into()));
        }
        if !(self.warm_start >= 0.0) || !self.warm_start.is_finite() {
            return Err(Error::Config("warm_start must be a non-negative duration".into()));
        }
        if self.mag_iterations == 0 || self.warm_iterations == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if !(self.divergence_anis >= 0.0) {
            return Err(Error::Config("divergence_anis must be non-negative".into()));
        }
        if !(self.g_local > 0.0) {
            return Err(Error::Config("g_local must be positive".into()));
        }
        if let (Some(a), Some(b)) = (self.start, self.stop) {
            if b <= a {
                return Err(Error::Config(format!("stop time {b} is not after start time {a}")));
            }
        }
        if !self.s_init.iter().all(|x| x.is_finite()) || self.s_init.determinant().abs() < 1e-12 {
            return Err(Error::Config("s_init must be finite and invertible".into()));
        }
        Ok(())
    }
}

fn symmetrize<T: Real>(p: &mut Cov<T>) {
    *p = (*p + p.transpose()) * T::lit(0.5);
}

/// Outcome of one measurement update.
#[derive(Clone, Copy, Debug)]
pub struct Innovation<T: Real> {
    pub nu: Vec3<T>,
    /// Innovation covariance `H·P·Hᵀ + R`.
    pub s: Mat3<T>,
    /// Normalized innovation squared `νᵀ S⁻¹ ν`.
    pub nis: T,
}

impl<T: Real> CalibState<T> {
    /// Initial state from the first magnetometer and accelerometer readings.
    pub fn init(cfg: &EkfConfig, first_mag: &Vec3<T>, first_accel: &Vec3<T>, t: f64) -> Result<Self> {
        if !first_mag.iter().chain(first_accel.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("first measurement"));
        }
        let n = first_mag.norm().as_f64();
        if n < 1e-6 {
            return Err(Error::DegenerateMagneticVector(n));
        }
        let sd = &cfg.init_std;
        let mut p = Cov::zeros();
        let mut fill = |off: usize, len: usize, sd: f64| {
            for i in off..off + len {
                p[(i, i)] = T::lit(sd * sd);
            }
        };
        fill(EPS, 3, sd.bias_dps.to_radians());
        fill(S, 9, sd.s);
        fill(H, 3, sd.h);
        fill(MI, 3, sd.m_i);
        fill(GI, 3, sd.g_i);
        Ok(Self {
            c: Mat3::identity(),
            eps: Vec3::zeros(),
            s: cfg.s_init.map(T::lit),
            h: Vec3::zeros(),
            m_i: *first_mag,
            g_i: -first_accel,
            p,
            t,
        })
    }

    /// First-order propagation over `dt` with body rate `gyro` (bias included).
    ///
    /// `P ← ΦPΦᵀ + Q_d`, `Φ = I + F·dt`, `Q_d = G·Q·Gᵀ·dt`. Only `Φ[ψ, δε] = C·dt`
    /// is off the identity, so the product is formed blockwise.
    pub fn propagate(&mut self, noise: &NoiseConfig, gyro: &Vec3<T>, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("propagation step {dt} must be positive")));
        }
        if !gyro.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("gyro"));
        }
        let h = T::lit(dt);
        let c = self.c;
        let a: SMatrix<T, 3, DIM> = c * self.p.fixed_rows::<3>(EPS);
        let cpc = c * self.p.fixed_view::<3, 3>(EPS, EPS) * c.transpose();
        {
            let mut rows = self.p.fixed_rows_mut::<3>(PSI);
            rows += a * h;
        }
        {
            let mut cols = self.p.fixed_columns_mut::<3>(PSI);
            cols += a.transpose() * h;
        }
        {
            let mut blk = self.p.fixed_view_mut::<3, 3>(PSI, PSI);
            blk += cpc * (h * h);
        }
        // G·Q·Gᵀ is diagonal because C·Cᵀ = I.
        let mut add_q = |off: usize, sigma: f64| {
            let q = T::lit(sigma * sigma * dt);
            for i in off..off + 3 {
                self.p[(i, i)] += q;
            }
        };
        add_q(PSI, noise.sigma_g);
        add_q(EPS, noise.sigma_eps);
        add_q(MI, noise.sigma_mi);
        add_q(GI, noise.sigma_gi);
        symmetrize(&mut self.p);

        let w = gyro - self.eps;
        self.c = orthonormalize(&(c * (Mat3::identity() + skew(&w) * h)));
        self.t += dt;
        Ok(())
    }

    fn update(&mut self, nu: Vec3<T>, j: &MeasJac<T>, var: f64) -> Result<Innovation<T>> {
        let pht: SMatrix<T, DIM, 3> = self.p * j.transpose();
        let mut s = j * pht + Mat3::identity() * T::lit(var);
        s = (s + s.transpose()) * T::lit(0.5);
        let s_inv = s.cholesky().ok_or(Error::InnovationConditioning)?.inverse();
        let k = pht * s_inv;
        let hp = pht.transpose();
        // Joseph form (I − KH)P(I − KH)ᵀ + KRKᵀ, expanded.
        self.p = self.p - k * hp - hp.transpose() * k.transpose() + k * s * k.transpose();
        symmetrize(&mut self.p);
        self.boxplus(&(k * nu));
        let nis = nu.dot(&(s_inv * nu));
        Ok(Innovation { nu, s, nis })
    }

    /// Magnetometer update with `R_m = σ_m²I`.
    pub fn update_mag(&mut self, noise: &NoiseConfig, y_m: &Vec3<T>) -> Result<Innovation<T>> {
        self.update_mag_iter(noise, y_m, 1)
    }

    /// Magnetometer update relinearized `iterations` times (Gauss-Newton on the
    /// measurement); one iteration is the plain EKF update. The reported
    /// innovation is always the one against the prior prediction.
    pub fn update_mag_iter(&mut self, noise: &NoiseConfig, y_m: &Vec3<T>, iterations: usize) -> Result<Innovation<T>> {
        if !y_m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("magnetometer"));
        }
        let var = noise.sigma_m * noise.sigma_m;
        let nu0 = y_m - self.predict_mag();
        if iterations <= 1 {
            let j = self.jac_mag();
            return self.update(nu0, &j, var);
        }
        let prior = self.clone();
        let r = Mat3::identity() * T::lit(var);
        let mut it = prior.clone();
        let mut first: Option<Innovation<T>> = None;
        let mut last_resid = T::lit(f64::INFINITY);
        for _ in 0..iterations {
            // Stop once relinearizing no longer shrinks the residual.
            let resid = (y_m - it.predict_mag()).norm();
            if first.is_some() && resid >= last_resid {
                break;
            }
            last_resid = resid;
            let j = it.jac_mag();
            let delta = it.error_from(&prior);
            let pht: SMatrix<T, DIM, 3> = prior.p * j.transpose();
            let mut s = j * pht + r;
            s = (s + s.transpose()) * T::lit(0.5);
            let s_inv = s.cholesky().ok_or(Error::InnovationConditioning)?.inverse();
            if first.is_none() {
                first = Some(Innovation { nu: nu0, s, nis: nu0.dot(&(s_inv * nu0)) });
            }
            let k = pht * s_inv;
            let dx = k * (y_m - it.predict_mag() + j * delta);
            let mut next = prior.clone();
            next.boxplus(&dx);
            let hp = pht.transpose();
            next.p = prior.p - k * hp - hp.transpose() * k.transpose() + k * s * k.transpose();
            symmetrize(&mut next.p);
            it = next;
        }
        *self = it;
        Ok(first.expect("at least one iteration"))
    }

    /// Gated accelerometer update with `R_a = σ_a²I`. Returns `None` when rejected.
    pub fn update_accel(&mut self, cfg: &EkfConfig, y_a: &Vec3<T>) -> Result<Option<Innovation<T>>> {
        if !accel_gate(y_a.norm().as_f64(), cfg.g_local, cfg.t_md) {
            return Ok(None);
        }
        let nu = y_a - self.predict_accel();
        let j = self.jac_accel();
        self.update(nu, &j, cfg.noise.sigma_a * cfg.noise.sigma_a).map(Some)
    }

    /// Smallest eigenvalue of `P` relative to its trace.
    pub fn covariance_health(&self) -> (f64, f64) {
        let asym = (self.p - self.p.transpose()).norm().as_f64() / self.p.norm().as_f64().max(f64::MIN_POSITIVE);
        let ev = sorted_eigenvalues(&self.p);
        let tr = self.p.trace().as_f64().max(f64::MIN_POSITIVE);
        (asym, ev[0] / tr)
    }
}

/// `|‖y_a‖ − g| < T_md`
pub fn accel_gate(norm: f64, g_local: f64, t_md: f64) -> bool {
    (norm - g_local).abs() < t_md
}

/// First time at or after `from` where the gyro norm stays above `threshold`
/// (rad/s) for `hold` seconds.
pub fn detect_motion_start<T: Real>(samples: &[SensorSample<T>], from: f64, threshold: f64, hold: f64) -> Option<f64> {
    let mut run_start: Option<f64> = None;
    for s in samples.iter().filter(|s| s.t >= from) {
        if s.gyro.norm().as_f64() > threshold {
            let t0 = *run_start.get_or_insert(s.t);
            if s.t - t0 >= hold {
                return Some(t0);
            }
        } else {
            run_start = None;
        }
    }
    None
}

/// Motion threshold for automatic start: three times the per-sample gyro
/// noise, but at least 0.05 rad/s so bias alone never triggers it.
pub fn motion_threshold(noise: &NoiseConfig, sample_rate: f64) -> f64 {
    (3.0 * noise.sigma_g * sample_rate.sqrt()).max(0.05)
}

/// Per-sample diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub innovation: [f64; 3],
    /// Three times the square root of the innovation covariance diagonal.
    pub bound3: [f64; 3],
    pub nis: f64,
    pub accel_accepted: bool,
    /// Gyro bias, deg/s.
    pub eps_dps: [f64; 3],
    /// `S` column-major.
    pub s: [f64; 9],
    pub h: [f64; 3],
    pub m_i: [f64; 3],
    pub g_i: [f64; 3],
}

/// Running statistics used by [`finalize`].
#[derive(Clone, Copy, Debug, Default)]
pub struct Diagnostics {
    pub nis_sum: f64,
    pub mag_updates: usize,
    pub accel_tried: usize,
    pub accel_accepted: usize,
    /// Worst relative asymmetry of `P` after symmetrization.
    pub max_asymmetry: f64,
    /// Most negative eigenvalue of `P` over its trace, when checked.
    pub min_eig_ratio: f64,
}

impl Diagnostics {
    pub fn anis(&self) -> f64 {
        if self.mag_updates == 0 {
            f64::NAN
        } else {
            self.nis_sum / self.mag_updates as f64
        }
    }

    pub fn accept_ratio(&self) -> f64 {
        if self.accel_tried == 0 {
            0.0
        } else {
            self.accel_accepted as f64 / self.accel_tried as f64
        }
    }
}

/// One filter pass.
#[derive(Clone, Debug)]
pub struct PassOutput {
    pub result: CalibResult,
    pub state: CalibState<f64>,
    pub diagnostics: Diagnostics,
    /// `(t, C_b^i)` for every processed sample.
    pub attitude: Vec<(f64, Dcm<f64>)>,
    pub history: Vec<StepRecord>,
    /// Diagnostics of the warm-start segment, if one was run.
    pub warm_history: Vec<StepRecord>,
    pub start: f64,
    /// End of the warm-start segment; equals `start` when disabled.
    pub warm_end: f64,
    /// Re-runs triggered by the divergence check.
    pub retries: usize,
}

impl PassOutput {
    /// Estimates as they were available at each time: the warm-start segment
    /// up to its end, the restarted filter afterwards.
    pub fn causal_history(&self) -> Vec<StepRecord> {
        self.warm_history
            .iter()
            .filter(|r| r.t <= self.warm_end)
            .chain(self.history.iter().filter(|r| r.t > self.warm_end))
            .cloned()
            .collect()
    }
}

/// Output of [`run`]; `first_pass` is set in two-pass mode.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub last: PassOutput,
    pub first_pass: Option<Box<PassOutput>>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn result(&self) -> &CalibResult {
        &self.last.result
    }
}

/// Selects the samples inside the configured window.
pub fn select_window<'a, T: Real>(
    samples: &'a [SensorSample<T>],
    cfg: &EkfConfig,
) -> Result<&'a [SensorSample<T>]> {
    let first = samples.first().ok_or_else(|| Error::InvalidInput("empty stream".into()))?.t;
    let last = samples.last().map(|s| s.t).unwrap_or(first);
    let mut start = cfg.start.unwrap_or(first);
    let stop = cfg.stop.unwrap_or(f64::INFINITY);
    if start > last {
        return Err(Error::OutOfRange { t: start, start: first, end: last });
    }
    if cfg.auto_start {
        let rate = if samples.len() > 1 { (samples.len() - 1) as f64 / (last - first) } else { 100.0 };
        let thr = motion_threshold(&cfg.noise, rate);
        start = detect_motion_start(samples, start, thr, 1.0)
            .ok_or_else(|| Error::Unobservable("no sustained motion found; stationary data do not determine the calibration".into()))?;
    }
    let i0 = samples.partition_point(|s| s.t < start);
    let i1 = samples.partition_point(|s| s.t <= stop);
    if i1 <= i0 + 1 {
        return Err(Error::InvalidInput(format!("window [{start}, {stop}] holds fewer than two samples")));
    }
    Ok(&samples[i0..i1])
}

struct Filtered<T: Real> {
    state: CalibState<T>,
    diag: Diagnostics,
    attitude: Vec<(f64, Dcm<f64>)>,
    history: Vec<StepRecord>,
}

fn filter<T: Real>(samples: &[SensorSample<T>], cfg: &EkfConfig, mut x: CalibState<T>) -> Result<Filtered<T>> {
    let s0 = &samples[0];
    let mut diag = Diagnostics::default();
    let mut attitude = Vec::with_capacity(samples.len());
    let mut history = Vec::new();
    attitude.push((s0.t, x.c.map(|v| v.as_f64())));
    let half = T::lit(0.5);
    let health_every = 500;
    for (k, pair) in samples.windows(2).enumerate() {
        let (prev, cur) = (&pair[0], &pair[1]);
        if !cur.is_finite() {
            return Err(Error::NonFinite("sample"));
        }
        let dt = cur.t - prev.t;
        if !(dt > 0.0) {
            return Err(Error::NonMonotoneTime { line: k + 2 });
        }
        x.propagate(&cfg.noise, &((prev.gyro + cur.gyro) * half), dt)?;
        let inn = x.update_mag_iter(&cfg.noise, &cur.mag, cfg.mag_iterations)?;
        diag.nis_sum += inn.nis.as_f64();
        diag.mag_updates += 1;
        let mut accepted = false;
        if cfg.use_accel {
            diag.accel_tried += 1;
            if x.update_accel(cfg, &cur.accel)?.is_some() {
                diag.accel_accepted += 1;
                accepted = true;
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("filter state"));
        }
        if k % health_every == 0 {
            let (asym, min_ratio) = x.covariance_health();
            diag.max_asymmetry = diag.max_asymmetry.max(asym);
            diag.min_eig_ratio = diag.min_eig_ratio.min(min_ratio);
        }
        attitude.push((cur.t, x.c.map(|v| v.as_f64())));
        if cfg.record_history {
            let f = |v: &Vec3<T>| [v.x.as_f64(), v.y.as_f64(), v.z.as_f64()];
            let d = inn.s.diagonal();
            history.push(StepRecord {
                t: cur.t,
                innovation: f(&inn.nu),
                bound3: [0, 1, 2].map(|i| 3.0 * d[i].as_f64().sqrt()),
                nis: inn.nis.as_f64(),
                accel_accepted: accepted,
                eps_dps: f(&x.eps).map(f64::to_degrees),
                s: std::array::from_fn(|i| x.s[i].as_f64()),
                h: f(&x.h),
                m_i: f(&x.m_i),
                g_i: f(&x.g_i),
            });
        }
    }
    let (asym, min_ratio) = x.covariance_health();
    diag.max_asymmetry = diag.max_asymmetry.max(asym);
    diag.min_eig_ratio = diag.min_eig_ratio.min(min_ratio);
    Ok(Filtered { state: x, diag, attitude, history })
}

/// Runs one pass over an already windowed stream. A diverged pass is re-run,
/// first with more warm-start relinearizations and, on the last re-run, from
/// the batch solution over the warm-start segment. The attempt with the lowest
/// ANIS wins.
pub fn run_pass<T: Real>(samples: &[SensorSample<T>], cfg: &EkfConfig) -> Result<PassOutput> {
    let mut best: Option<PassOutput> = None;
    let mut last_err = None;
    for retry in 0..=cfg.max_retries {
        let batch = retry > 0 && retry == cfg.max_retries;
        let c = EkfConfig { warm_iterations: cfg.warm_iterations + retry, ..cfg.clone() };
        let seed = if batch {
            match batch_seed(samples, cfg.warm_start) {
                Some(s) => Some(s),
                None => continue,
            }
        } else {
            None
        };
        match attempt(samples, &c, seed) {
            Ok(mut out) => {
                out.retries = retry;
                let anis = out.diagnostics.anis();
                let ok = cfg.divergence_anis == 0.0 || anis <= cfg.divergence_anis;
                if best.as_ref().map_or(true, |b| anis < b.diagnostics.anis()) {
                    best = Some(out);
                }
                if ok {
                    break;
                }
            }
            Err(e @ (Error::NonFinite(_) | Error::InnovationConditioning)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::InvalidInput("no filter pass completed".into())),
    }
}

/// Starting `(S, h, ε)` from the attitude-independent ellipsoid fit and the
/// gyro alignment solve over the first `span` seconds (the whole stream when
/// `span` is zero). `None` when either solve fails.
fn batch_seed<T: Real>(samples: &[SensorSample<T>], span: f64) -> Option<(Mat3<T>, Vec3<T>, Vec3<T>)> {
    let t0 = samples.first()?.t;
    let n = if span > 0.0 { samples.partition_point(|s| s.t <= t0 + span) } else { samples.len() };
    let part = &samples[..n];
    if part.len() < 10 {
        return None;
    }
    let dt = (part[n - 1].t - t0) / (n - 1) as f64;
    let mags: Vec<Vec3<T>> = part.iter().map(|s| s.mag).collect();
    let gyro: Vec<Vec3<T>> = part.iter().map(|s| s.gyro).collect();
    let ip = fit_intrinsic(&mags, DEFAULT_TOL).ok()?;
    let y_star: Vec<Vec3<T>> = mags.iter().map(|y| ip.apply(y)).collect();
    let al = solve_alignment(&y_star, &gyro, dt, Derivative::Central5, DEFAULT_TOL).ok()?;
    let s = (al.c_b_m.transpose() * ip.r.matrix()).try_inverse()?;
    s.iter().all(|v| v.is_finite()).then_some((s, ip.h, al.eps))
}

fn attempt<T: Real>(
    samples: &[SensorSample<T>],
    cfg: &EkfConfig,
    seed: Option<(Mat3<T>, Vec3<T>, Vec3<T>)>,
) -> Result<PassOutput> {
    let s0 = samples.first().ok_or_else(|| Error::InvalidInput("empty stream".into()))?;
    let mut x0 = CalibState::<T>::init(cfg, &s0.mag, &s0.accel, s0.t)?;
    if let Some((s, h, eps)) = seed {
        x0.m_i = s.try_inverse().ok_or(Error::Singular("batch seed S"))? * (s0.mag - h);
        x0.s = s;
        x0.h = h;
        x0.eps = eps;
    }
    let mut warm_history = Vec::new();
    let mut warm_end = s0.t;
    let mut seeded = x0.clone();
    if cfg.warm_start > 0.0 {
        let n = samples.partition_point(|s| s.t <= s0.t + cfg.warm_start);
        if n >= 2 {
            let warm_cfg = EkfConfig { mag_iterations: cfg.warm_iterations, ..cfg.clone() };
            for _ in 0..cfg.warm_rounds.max(1) {
                let warm = filter(&samples[..n], &warm_cfg, seeded.clone())?;
                let w = warm.state;
                seeded = CalibState { eps: w.eps, s: w.s, h: w.h, m_i: w.m_i, g_i: w.g_i, ..x0.clone() };
                warm_history = warm.history;
            }
            warm_end = samples[n - 1].t;
        }
    }
    let Filtered { state: x, diag, attitude, history } = filter(samples, cfg, seeded)?;
    let state = CalibState {
        c: x.c.map(|v| v.as_f64()),
        eps: x.eps.map(|v| v.as_f64()),
        s: x.s.map(|v| v.as_f64()),
        h: x.h.map(|v| v.as_f64()),
        m_i: x.m_i.map(|v| v.as_f64()),
        g_i: x.g_i.map(|v| v.as_f64()),
        p: x.p.map(|v| v.as_f64()),
        t: x.t,
    };
    let result = finalize(&state, &diag)?;
    Ok(PassOutput { result, state, diagnostics: diag, attitude, history, warm_history, start: s0.t, warm_end, retries: 0 })
}

/// Full filter run: window selection, optional second pass seeded with the
/// first pass's re-scaled `S`, and an excitation check on the magnetometer data.
pub fn run<T: Real>(samples: &[SensorSample<T>], cfg: &EkfConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let window = select_window(samples, cfg)?;
    let mut warnings = Vec::new();
    if let Some(w) = excitation_warning(window) {
        warnings.push(w);
    }
    let first = run_pass(window, cfg)?;
    note_divergence(&first, cfg, &mut warnings);
    if !cfg.two_pass {
        return Ok(RunOutput { last: first, first_pass: None, warnings });
    }
    let cfg2 = EkfConfig { s_init: first.result.s_rs, two_pass: false, ..cfg.clone() };
    let second = run_pass(window, &cfg2)?;
    note_divergence(&second, cfg, &mut warnings);
    Ok(RunOutput { last: second, first_pass: Some(Box::new(first)), warnings })
}

fn note_divergence(p: &PassOutput, cfg: &EkfConfig, warnings: &mut Vec<String>) {
    let anis = p.diagnostics.anis();
    if cfg.divergence_anis > 0.0 && anis > cfg.divergence_anis {
        warnings.push(format!("filter looks inconsistent: ANIS {anis:.2} after {} re-runs", p.retries));
    } else if p.retries > 0 {
        warnings.push(format!("filter re-run {} time(s) after an inconsistent first attempt", p.retries));
    }
}

/// Warns when the magnetometer data do not determine the ellipsoid.
fn excitation_warning<T: Real>(samples: &[SensorSample<T>]) -> Option<String> {
    let mut g = SMatrix::<f64, 10, 10>::zeros();
    for s in samples {
        let r = row_y(&s.mag.map(|v| v.as_f64()));
        g += r * r.transpose();
    }
    let ev = sorted_eigenvalues(&g);
    let max = ev[9];
    let zeros = ev.iter().filter(|e| **e <= DEFAULT_TOL * max).count();
    (max <= 0.0 || zeros > 1).then(|| {
        format!(
            "magnetometer data leave {zeros} near-zero directions in the ellipsoid Gramian; \
             calibration parameters are not observable from this motion"
        )
    })
}
