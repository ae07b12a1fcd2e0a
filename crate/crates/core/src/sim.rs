//! Synthetic gyro/accelerometer/magnetometer streams with known ground truth.
//!
//! The simulator integrates the true attitude with RK4 (two sub-steps per
//! sample) against an analytic angular-rate model, so it is strictly more
//! accurate than the first-order propagation used by the filter it checks.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::so3::{exp_so3, orthonormalize, skew, Dcm, Mat3, Vec3};

/// Earth rotation rate, rad/s.
pub const EARTH_RATE: f64 = 7.292115e-5;

/// Noise densities. Angular quantities in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Gyro white noise, rad/√s.
    pub sigma_g: f64,
    /// Gyro bias random walk, rad/√s³.
    pub sigma_eps: f64,
    /// Magnetometer white noise, normalized field units.
    pub sigma_m: f64,
    /// Accelerometer noise, m/s².
    pub sigma_a: f64,
    /// Random walk of the inertial magnetic vector, 1/√s.
    pub sigma_mi: f64,
    /// Random walk of the inertial gravity vector, m/√s⁵.
    pub sigma_gi: f64,
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self { sigma_g: 0.0, sigma_eps: 0.0, sigma_m: 0.0, sigma_a: 0.0, sigma_mi: 0.0, sigma_gi: 0.0 }
    }

    /// Low-cost MEMS unit settings: 0.01 deg/√s gyro noise, 1e-4 deg/√s³ bias
    /// walk, 0.005 magnetometer noise, accelerometer noise three times the
    /// magnitude gate `t_md`, and Earth-rate sized drift of the constant vectors.
    pub fn reference(t_md: f64) -> Self {
        Self {
            sigma_g: 0.01f64.to_radians(),
            sigma_eps: 1e-4f64.to_radians(),
            sigma_m: 0.005,
            sigma_a: 3.0 * t_md,
            sigma_mi: EARTH_RATE,
            sigma_gi: 9.8 * EARTH_RATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_g, self.sigma_eps, self.sigma_m, self.sigma_a, self.sigma_mi, self.sigma_gi];
        if all.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("noise standard deviations must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Ground truth for a simulated run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimTruth {
    /// Magnetometer calibration matrix.
    pub s: Mat3<f64>,
    /// Hard-iron bias.
    pub h: Vec3<f64>,
    /// Constant gyro bias, rad/s.
    pub eps: Vec3<f64>,
    /// Local magnetic field direction in the Earth frame (unit norm).
    pub m_e: Vec3<f64>,
    /// Local gravity vector in the Earth frame, m/s².
    pub g_e: Vec3<f64>,
    /// Body-to-Earth attitude at the first sample.
    pub initial_attitude: Dcm<f64>,
    pub noise: NoiseConfig,
    pub sample_rate: f64,
    /// Adds Earth rotation (given in the Earth frame, rad/s) to the gyro and
    /// rotates the Earth frame away from the inertial frame.
    #[serde(default)]
    pub earth_rate: Option<Vec3<f64>>,
}

impl SimTruth {
    /// North-east-down field with the given inclination (degrees), 9.8 m/s² gravity,
    /// no distortion, 100 Hz.
    pub fn ned(inclination_deg: f64, noise: NoiseConfig) -> Self {
        let inc = inclination_deg.to_radians();
        Self {
            s: Mat3::identity(),
            h: Vec3::zeros(),
            eps: Vec3::zeros(),
            m_e: Vec3::new(inc.cos(), 0.0, inc.sin()),
            g_e: Vec3::new(0.0, 0.0, 9.8),
            initial_attitude: Mat3::identity(),
            noise,
            sample_rate: 100.0,
            earth_rate: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if (self.m_e.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("m_e must have unit norm".into()));
        }
        if self.s.try_inverse().is_none() || self.s.determinant().abs() < 1e-12 {
            return Err(Error::Config("S must be invertible".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    /// Magnetic vector expressed in the inertial frame (the body frame at t = 0).
    pub fn m_i(&self) -> Vec3<f64> {
        self.initial_attitude.transpose() * self.m_e
    }

    pub fn g_i(&self) -> Vec3<f64> {
        self.initial_attitude.transpose() * self.g_e
    }
}

/// One motion segment. No excited axis means the unit is held still.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    #[serde(default)]
    pub axes: [bool; 3],
    /// Peak body rate per axis, rad/s.
    #[serde(default)]
    pub peak_rate: f64,
    /// Per-axis rate scale applied on top of `peak_rate`.
    #[serde(default = "unit_weights")]
    pub weights: [f64; 3],
}

fn unit_weights() -> [f64; 3] {
    [1.0; 3]
}

impl Segment {
    pub fn still(duration: f64) -> Self {
        Self { duration, axes: [false; 3], peak_rate: 0.0, weights: unit_weights() }
    }

    pub fn tumble(duration: f64, axes: [bool; 3], peak_rate: f64) -> Self {
        Self { duration, axes, peak_rate, weights: unit_weights() }
    }

    pub fn weighted(self, weights: [f64; 3]) -> Self {
        Self { weights, ..self }
    }

    pub fn is_still(&self) -> bool {
        !self.axes.iter().any(|a| *a) || self.peak_rate == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub segments: Vec<Segment>,
    pub sample_rate: f64,
}

impl MotionProfile {
    /// Still period followed by an all-axis tumble.
    pub fn hand_tumble(still: f64, tumble: f64, peak_rate: f64) -> Self {
        Self {
            segments: vec![Segment::still(still), Segment::tumble(tumble, [true; 3], peak_rate)],
            sample_rate: 100.0,
        }
    }

    /// x-only, then y-only, then z-only rotation segments.
    pub fn sequential_axes(each: f64, peak_rate: f64) -> Self {
        Self {
            segments: vec![
                Segment::tumble(each, [true, false, false], peak_rate),
                Segment::tumble(each, [false, true, false], peak_rate),
                Segment::tumble(each, [false, false, true], peak_rate),
            ],
            sample_rate: 100.0,
        }
    }

    /// Still, then x only, then mostly y with a `wobble` fraction on x and z,
    /// then all three axes at full rate.
    pub fn staggered_axes(still: f64, each: f64, peak_rate: f64, wobble: f64) -> Self {
        Self {
            segments: vec![
                Segment::still(still),
                Segment::tumble(each, [true, false, false], peak_rate),
                Segment::tumble(each, [true; 3], peak_rate).weighted([wobble, 1.0, wobble]),
                Segment::tumble(each, [true; 3], peak_rate),
            ],
            sample_rate: 100.0,
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Harmonic {
    amp: f64,
    freq: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
struct SegmentModel {
    start: f64,
    end: f64,
    peak: f64,
    axes: [Vec<Harmonic>; 3],
}

const RAMP: f64 = 1.0;

impl SegmentModel {
    fn window(&self, t: f64) -> f64 {
        let ramp = RAMP.min(0.5 * (self.end - self.start));
        let x = ((t - self.start) / ramp).min((self.end - t) / ramp).clamp(0.0, 1.0);
        let s = (0.5 * std::f64::consts::PI * x).sin();
        s * s
    }

    fn rate(&self, t: f64) -> Vec3<f64> {
        let tau = t - self.start;
        let w = self.window(t) * self.peak;
        let mut out = Vec3::zeros();
        for (axis, harmonics) in self.axes.iter().enumerate() {
            out[axis] = w * harmonics
                .iter()
                .map(|h| h.amp * (2.0 * std::f64::consts::PI * h.freq * tau + h.phase).sin())
                .sum::<f64>();
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajSample {
    pub t: f64,
    pub omega: Vec3<f64>,
    pub tumbling: bool,
}

/// Body angular rate (relative to the Earth frame) on a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub sample_rate: f64,
    pub samples: Vec<TrajSample>,
    segments: Vec<SegmentModel>,
}

impl Trajectory {
    /// Evaluates the analytic rate model at an arbitrary time.
    pub fn rate_at(&self, t: f64) -> Vec3<f64> {
        self.segments
            .iter()
            .find(|s| t >= s.start && t <= s.end && s.peak > 0.0)
            .map_or_else(Vec3::zeros, |s| s.rate(t))
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Time windows of still segments.
    pub fn still_windows(&self) -> Vec<(f64, f64)> {
        self.segments.iter().filter(|s| s.peak == 0.0).map(|s| (s.start, s.end)).collect()
    }

    /// Time windows of tumbling segments.
    pub fn tumble_windows(&self) -> Vec<(f64, f64)> {
        self.segments.iter().filter(|s| s.peak > 0.0).map(|s| (s.start, s.end)).collect()
    }
}

/// Builds a piecewise-smooth rate history from a motion profile.
///
/// Each excited axis carries a sum of three sinusoids (0.05–0.4 Hz, random
/// phase) scaled so that its magnitude never exceeds the peak rate; a 1 s
/// sin² ramp at segment edges keeps the rate continuous.
pub fn gen_trajectory(profile: &MotionProfile, seed: u64) -> Result<Trajectory> {
    if profile.segments.is_empty() {
        return Err(Error::InvalidInput("motion profile has no segments".into()));
    }
    if profile.segments.iter().any(|s| !(s.duration > 0.0)) {
        return Err(Error::InvalidInput("segment durations must be positive".into()));
    }
    if profile.segments.iter().flat_map(|s| s.weights).any(|w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput("axis weights must be finite and non-negative".into()));
    }
    if !(profile.sample_rate > 0.0) {
        return Err(Error::InvalidInput("sample rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = 0.0;
    let mut segments = Vec::with_capacity(profile.segments.len());
    for seg in &profile.segments {
        let mut axes: [Vec<Harmonic>; 3] = Default::default();
        let still = seg.is_still();
        if !still {
            for (axis, on) in seg.axes.iter().enumerate() {
                if !on {
                    continue;
                }
                let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let weight = seg.weights[axis];
                axes[axis] = raw
                    .into_iter()
                    .map(|a| Harmonic {
                        amp: weight * a / total,
                        freq: rng.random_range(0.05..0.4),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    })
                    .collect();
            }
        }
        segments.push(SegmentModel {
            start,
            end: start + seg.duration,
            peak: if still { 0.0 } else { seg.peak_rate },
            axes,
        });
        start += seg.duration;
    }
    let dt = 1.0 / profile.sample_rate;
    let n = (start * profile.sample_rate).round() as usize + 1;
    let mut traj = Trajectory { sample_rate: profile.sample_rate, samples: Vec::with_capacity(n), segments };
    for k in 0..n {
        let t = k as f64 * dt;
        let tumbling = traj.segments.iter().any(|s| s.peak > 0.0 && t >= s.start && t < s.end);
        let omega = traj.rate_at(t);
        traj.samples.push(TrajSample { t, omega, tumbling });
    }
    Ok(traj)
}

/// One timestamped gyro/accelerometer/magnetometer triple.
///
/// Gyro in rad/s, accelerometer in m/s², magnetometer in raw (normalized) units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSample<T: Real> {
    pub t: f64,
    pub gyro: Vec3<T>,
    pub accel: Vec3<T>,
    pub mag: Vec3<T>,
}

impl<T: Real> SensorSample<T> {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.gyro.iter().chain(self.accel.iter()).chain(self.mag.iter()).all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> SensorSample<U> {
        let c = |v: &Vec3<T>| v.map(|x| U::lit(x.as_f64()));
        SensorSample { t: self.t, gyro: c(&self.gyro), accel: c(&self.accel), mag: c(&self.mag) }
    }
}

/// Simulated stream with its reference inertial attitudes `C_b(t)^i`.
#[derive(Clone, Debug)]
pub struct SimOutput<T: Real> {
    pub samples: Vec<SensorSample<T>>,
    pub attitudes: Vec<Dcm<T>>,
    pub m_i: Vec3<T>,
    pub g_i: Vec3<T>,
}

fn rk4_step(c: &Dcm<f64>, traj: &Trajectory, t: f64, h: f64) -> Dcm<f64> {
    let f = |c: &Dcm<f64>, t: f64| c * skew(&traj.rate_at(t));
    let k1 = f(c, t);
    let k2 = f(&(c + k1 * (0.5 * h)), t + 0.5 * h);
    let k3 = f(&(c + k2 * (0.5 * h)), t + 0.5 * h);
    let k4 = f(&(c + k3 * h), t + h);
    c + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Generates sensor readings along `traj` for the given truth.
///
/// Readings are instantaneous samples at each time step:
/// `gyro = ω + ε + n_g`, `mag = S·C_i^b·m^i + h + n_m`, `accel = −C_i^b·g^i + n_a`.
/// Gyro noise has per-sample standard deviation `σ_g·√rate`.
pub fn simulate<T: Real>(truth: &SimTruth, traj: &Trajectory, seed: u64) -> Result<SimOutput<T>> {
    truth.validate()?;
    if traj.samples.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let n01 = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noise = |sigma: f64| -> Vec3<f64> {
        if sigma == 0.0 {
            return Vec3::zeros();
        }
        Vec3::new(n01.sample(&mut rng), n01.sample(&mut rng), n01.sample(&mut rng)) * sigma
    };
    let gyro_sd = truth.noise.sigma_g * traj.sample_rate.sqrt();
    let c_b0_e = truth.initial_attitude;
    let mut c_b_e = c_b0_e;
    let mut out = SimOutput {
        samples: Vec::with_capacity(traj.samples.len()),
        attitudes: Vec::with_capacity(traj.samples.len()),
        m_i: truth.m_i().map(T::lit),
        g_i: truth.g_i().map(T::lit),
    };
    let t0 = traj.samples[0].t;
    for (k, ts) in traj.samples.iter().enumerate() {
        if k > 0 {
            let t_prev = traj.samples[k - 1].t;
            let half = 0.5 * (ts.t - t_prev);
            c_b_e = rk4_step(&c_b_e, traj, t_prev, half);
            c_b_e = rk4_step(&c_b_e, traj, t_prev + half, half);
            c_b_e = orthonormalize(&c_b_e);
        }
        let (c_b_i, gyro_true) = match truth.earth_rate {
            None => (c_b0_e.transpose() * c_b_e, ts.omega),
            Some(w_ie) => {
                let e_t = exp_so3(&(w_ie * (ts.t - t0)));
                (c_b0_e.transpose() * e_t * c_b_e, ts.omega + c_b_e.transpose() * w_ie)
            }
        };
        let c_e_b = c_b_e.transpose();
        let mag = truth.s * c_e_b * truth.m_e + truth.h + noise(truth.noise.sigma_m);
        let accel = -(c_e_b * truth.g_e) + noise(truth.noise.sigma_a);
        let gyro = gyro_true + truth.eps + noise(gyro_sd);
        out.samples.push(SensorSample {
            t: ts.t,
            gyro: gyro.map(T::lit),
            accel: accel.map(T::lit),
            mag: mag.map(T::lit),
        });
        out.attitudes.push(c_b_i.map(T::lit));
    }
    Ok(out)
}

/// Additive specific-force disturbance, expressed in the body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    /// Constant-magnitude vector whose three components are sinusoids 120° apart.
    Sinusoid { magnitude: f64, freq_hz: f64 },
    Constant { vector: [f64; 3] },
}

impl Disturbance {
    fn at(&self, t: f64) -> Vec3<f64> {
        match *self {
            Disturbance::Sinusoid { magnitude, freq_hz } => {
                let ph = std::f64::consts::TAU * freq_hz * t;
                let third = std::f64::consts::TAU / 3.0;
                Vec3::new(ph.sin(), (ph + third).sin(), (ph + 2.0 * third).sin())
                    * (magnitude / 1.5f64.sqrt())
            }
            Disturbance::Constant { vector } => Vec3::from(vector),
        }
    }

    fn is_zero(&self) -> bool {
        match *self {
            Disturbance::Sinusoid { magnitude, .. } => magnitude == 0.0,
            Disturbance::Constant { vector } => vector.iter().all(|v| *v == 0.0),
        }
    }
}

/// Adds a linear-acceleration disturbance to the accelerometer readings that
/// fall inside any of the `[start, end)` windows. Gyro and magnetometer are untouched.
pub fn inject_acceleration<T: Real>(
    stream: &[SensorSample<T>],
    windows: &[(f64, f64)],
    disturbance: Disturbance,
) -> Result<Vec<SensorSample<T>>> {
    let (first, last) = match (stream.first(), stream.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Ok(Vec::new()),
    };
    for &(a, b) in windows {
        for t in [a, b] {
            if t < first || t > last + 1e-9 {
                return Err(Error::OutOfRange { t, start: first, end: last });
            }
        }
    }
    let mut out = stream.to_vec();
    if disturbance.is_zero() {
        return Ok(out);
    }
    for s in out.iter_mut() {
        if windows.iter().any(|&(a, b)| s.t >= a && s.t < b) {
            s.accel += disturbance.at(s.t).map(T::lit);
        }
    }
    Ok(out)
}

/// Alternating disturbed/clean windows of `period` seconds covering `[start, end)`:
/// half of the samples are disturbed.
pub fn alternating_windows(start: f64, end: f64, period: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = start;
    while t < end {
        out.push((t, (t + period).min(end)));
        t += 2.0 * period;
    }
    out
}

/// Builds `S` from an intrinsic upper-triangular `R` and the cross-sensor
/// rotation `C_m^b` via `S⁻¹ = C_m^b R`.
pub fn calibration_matrix(r: &Mat3<f64>, c_m_b: &Dcm<f64>) -> Mat3<f64> {
    (c_m_b * r).try_inverse().unwrap_or_else(Matrix3::identity)
}
