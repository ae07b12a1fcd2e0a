//! End-to-end runs: load data, check observability, calibrate, score.

use serde::{Deserialize, Serialize};

use crate::batch::{fit_intrinsic, inclination_deg, integrate_gyro, solve_alignment, solve_full_thm22};
use crate::ekf::{self, CalibResult, EkfConfig, RunOutput, StepRecord};
use crate::error::{Error, Result};
use crate::observability::{observe_stream, ObserveOptions, ObsvReport, Verdict};
use crate::so3::{dcm_to_euler, log_so3, qr_pos_diag};
use crate::{Dcm, Mat3, Sample, Vec3};

use super::config::{Mode, RunConfig, Simulated, Source};
use super::dataset::{ingest_csv, Gap};
use super::report::{Recovery, RunReport, TruthSummary};

/// Mean gyro over a stationary window, deg/s.
pub fn still_average_bias(samples: &[Sample], window: (f64, f64), max_std_dps: f64) -> Result<Vec3> {
    let first = samples.first().map_or(0.0, |s| s.t);
    let last = samples.last().map_or(0.0, |s| s.t);
    if window.0 < first || window.1 > last || !(window.1 > window.0) {
        return Err(Error::OutOfRange { t: if window.0 < first { window.0 } else { window.1 }, start: first, end: last });
    }
    let g: Vec<Vec3> = samples.iter().filter(|s| s.t >= window.0 && s.t <= window.1).map(|s| s.gyro).collect();
    if g.len() < 2 {
        return Err(Error::InvalidInput("stationary window holds fewer than two samples".into()));
    }
    let n = g.len() as f64;
    let mean = g.iter().sum::<Vec3>() / n;
    let var = g.iter().map(|v| (v - mean).component_mul(&(v - mean))).sum::<Vec3>() / (n - 1.0);
    let std_dps = var.map(f64::sqrt).max().to_degrees();
    if std_dps > max_std_dps {
        return Err(Error::MotionInWindow { std_dps });
    }
    Ok(mean.map(f64::to_degrees))
}

/// Per-sample roll, pitch, yaw (degrees) of `C_ekfᵀ C_gyro`.
pub fn compare_attitude(ekf: &[(f64, Dcm)], gyro: &[(f64, Dcm)]) -> Result<Vec<(f64, [f64; 3])>> {
    if ekf.len() != gyro.len() {
        return Err(Error::Misaligned(format!("{} vs {} samples", ekf.len(), gyro.len())));
    }
    ekf.iter()
        .zip(gyro)
        .map(|((ta, a), (tb, b))| {
            if (ta - tb).abs() > 1e-9 {
                return Err(Error::Misaligned(format!("timestamps {ta} and {tb}")));
            }
            Ok((*ta, dcm_to_euler(&(a.transpose() * b)).to_degrees()))
        })
        .collect()
}

/// Gyro-only relative attitude from identity at the first sample, bias removed.
pub fn gyro_attitude(samples: &[Sample], bias_dps: &Vec3) -> Vec<(f64, Dcm)> {
    let dt = median_dt(samples);
    let gyro: Vec<Vec3> = samples.iter().map(|s| s.gyro).collect();
    let bias = bias_dps.map(f64::to_radians);
    samples.iter().map(|s| s.t).zip(integrate_gyro(&gyro, &bias, dt, Default::default())).collect()
}

pub fn median_dt(samples: &[Sample]) -> f64 {
    let mut d: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// RMS of a series of rotation angles, degrees.
pub fn rms_deg(series: &[(f64, [f64; 3])]) -> f64 {
    let sum: f64 = series.iter().map(|(_, e)| e.iter().map(|x| x * x).sum::<f64>()).sum();
    (sum / series.len().max(1) as f64).sqrt()
}

/// Batch estimate in report units.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BatchResult {
    pub r: Mat3,
    pub h: Vec3,
    pub c_b_m: Dcm,
    pub euler_deg: [f64; 3],
    pub eps_dps: Vec3,
    pub s_rs: Option<Mat3>,
    pub m_rs: Option<Vec3>,
    pub g_i: Option<Vec3>,
    pub inclination_deg: Option<f64>,
}

/// Columns of the plot CSVs.
#[derive(Clone, Debug, Default)]
pub struct Plots {
    pub log_ratio: Vec<(f64, f64)>,
    pub history: Vec<StepRecord>,
    /// EKF versus gyro-only attitude.
    pub attitude: Vec<(f64, [f64; 3])>,
    /// EKF versus true attitude, degrees of rotation (simulation only).
    pub attitude_truth: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub plots: Plots,
    pub ekf: Option<RunOutput>,
}

/// Loaded samples with optional truth.
pub struct Stream {
    pub samples: Vec<Sample>,
    pub gaps: Vec<Gap>,
    pub stationary: Vec<(f64, f64)>,
    pub sim: Option<Simulated>,
}

pub fn load_stream(cfg: &RunConfig) -> Result<Stream> {
    match &cfg.source {
        Source::Dataset(d) => {
            let ing = ingest_csv(d)?;
            Ok(Stream { samples: ing.samples, gaps: ing.gaps, stationary: d.stationary.clone(), sim: None })
        }
        Source::Simulation(s) => {
            let sim = s.generate(&cfg.noise, cfg.seed)?;
            let stationary = sim.trajectory.still_windows();
            Ok(Stream { samples: sim.output.samples.clone(), gaps: Vec::new(), stationary, sim: Some(sim) })
        }
    }
}

/// Observability of the samples the run would use.
pub fn observability(cfg: &RunConfig, samples: &[Sample], bias_dps: Option<Vec3>) -> Result<ObsvReport> {
    let window = match ekf::select_window(samples, &cfg.ekf_config()) {
        Ok(w) => w,
        // no motion to start from: report on everything
        Err(Error::Unobservable(_)) => samples,
        Err(e) => return Err(e),
    };
    let opts = ObserveOptions {
        gyro_bias: bias_dps.map_or(Vec3::zeros(), |b| b.map(f64::to_radians)),
        ..Default::default()
    };
    let (g, series) = observe_stream(window, &opts);
    let mut rep = g.report(cfg.obsv_tol);
    rep.log_ratio_series = series;
    Ok(rep)
}

fn still_bias(cfg: &RunConfig, stream: &Stream, warnings: &mut Vec<String>) -> Option<Vec3> {
    let w = *stream.stationary.first()?;
    match still_average_bias(&stream.samples, w, cfg.still_max_std_dps) {
        Ok(b) => Some(b),
        Err(e) => {
            warnings.push(format!("still averaging skipped: {e}"));
            None
        }
    }
}

fn run_batch(cfg: &RunConfig, window: &[Sample]) -> Result<BatchResult> {
    let dt = median_dt(window);
    let mags: Vec<Vec3> = window.iter().map(|s| s.mag).collect();
    let gyro: Vec<Vec3> = window.iter().map(|s| s.gyro).collect();
    let b = &cfg.batch;
    match cfg.mode {
        Mode::BatchThm21 => {
            let ip = fit_intrinsic(&mags, b.tol)?;
            let y_star: Vec<Vec3> = mags.iter().map(|y| ip.apply(y)).collect();
            let al = solve_alignment(&y_star, &gyro, dt, b.derivative, b.tol)?;
            Ok(BatchResult {
                r: *ip.r.matrix(),
                h: ip.h,
                c_b_m: al.c_b_m,
                euler_deg: dcm_to_euler(&al.c_b_m).to_degrees(),
                eps_dps: al.eps.map(f64::to_degrees),
                s_rs: None,
                m_rs: None,
                g_i: None,
                inclination_deg: None,
            })
        }
        _ => {
            let accel: Vec<Vec3> = window.iter().map(|s| s.accel).collect();
            let full = solve_full_thm22(&gyro, &accel, &mags, dt, b.derivative, b.integrator, b.tol)?;
            let s_inv = full.s.try_inverse().ok_or(Error::Singular("S"))?;
            let (c_m_b, r) = qr_pos_diag(&s_inv)?;
            let c_b_m = c_m_b.transpose();
            Ok(BatchResult {
                r: r.into_inner(),
                h: full.h,
                c_b_m,
                euler_deg: dcm_to_euler(&c_b_m).to_degrees(),
                eps_dps: full.eps.map(f64::to_degrees),
                s_rs: Some(full.s),
                m_rs: Some(full.m_i),
                g_i: Some(full.g_i),
                inclination_deg: Some(inclination_deg(&full.m_i, &full.g_i)),
            })
        }
    }
}

fn recovery(truth: &TruthSummary, eps_dps: &Vec3, euler: &[f64; 3], r: &Mat3, h: &Vec3, c_b_m: &Dcm) -> Recovery {
    let c_true = crate::so3::euler_to_dcm(&crate::so3::Euler::from_degrees(truth.euler_deg[0], truth.euler_deg[1], truth.euler_deg[2]));
    Recovery {
        bias_dps: (eps_dps - truth.eps_dps).amax(),
        euler_deg: (0..3).map(|i| (euler[i] - truth.euler_deg[i]).abs()).fold(0.0, f64::max),
        misalignment_deg: log_so3(&(c_b_m * c_true.transpose())).norm().to_degrees(),
        r: (r - truth.r).amax(),
        h: (h - truth.h).amax(),
    }
}

/// Executes the configured mode and scores it.
pub fn run_calibration(cfg: &RunConfig, config_hash: &str) -> Result<RunArtifacts> {
    cfg.validate()?;
    let stream = load_stream(cfg)?;
    run_on_stream(cfg, config_hash, &stream)
}

pub fn run_on_stream(cfg: &RunConfig, config_hash: &str, stream: &Stream) -> Result<RunArtifacts> {
    let mut warnings: Vec<String> = stream
        .gaps
        .iter()
        .map(|g| format!("{} missing sample(s) after t = {} s", g.missing, g.after))
        .collect();
    let still = still_bias(cfg, stream, &mut warnings);
    let ekf_cfg: EkfConfig = cfg.ekf_config();
    let window = ekf::select_window(&stream.samples, &ekf_cfg)?;
    let obsv = observability(cfg, &stream.samples, still)?;
    let verdict = if cfg.mode == Mode::BatchThm22 { obsv.accelerometer } else { obsv.magnetometer_gyro };
    match verdict {
        Verdict::Unobservable if !cfg.allow_unobservable => {
            return Err(Error::Unobservable(format!(
                "the {} data do not excite enough rotation axes:\n{obsv}",
                cfg.mode.name()
            )))
        }
        Verdict::Unobservable => warnings.push("observability check failed; continuing as configured".into()),
        Verdict::Marginal => warnings.push("observability is marginal; estimates may be poorly determined".into()),
        Verdict::Observable => {}
    }
    let truth = stream.sim.as_ref().map(|s| {
        let spec = match &cfg.source {
            Source::Simulation(spec) => spec,
            Source::Dataset(_) => unreachable!("truth only exists for simulated sources"),
        };
        TruthSummary {
            r: spec.r_matrix(),
            h: s.truth.h,
            euler_deg: spec.euler_deg,
            eps_dps: s.truth.eps.map(f64::to_degrees),
            inclination_deg: spec.inclination_deg,
        }
    });
    let mut plots = Plots { log_ratio: obsv.log_ratio_series.clone(), ..Default::default() };
    let mut report = RunReport {
        mode: cfg.mode,
        config_hash: config_hash.to_string(),
        seed: cfg.seed,
        samples: window.len(),
        window: (window[0].t, window[window.len() - 1].t),
        ekf: None,
        ekf_first_pass: None,
        batch: None,
        obsv,
        still_bias_dps: still,
        truth: truth.clone(),
        recovery: None,
        attitude_rms_deg: None,
        attitude_truth_rms_deg: None,
        gaps: stream.gaps.clone(),
        warnings,
    };
    let mut ekf_out = None;
    if cfg.mode.is_ekf() {
        let out = ekf::run(&stream.samples, &ekf_cfg)?;
        report.warnings.extend(out.warnings.iter().cloned());
        let res: &CalibResult = out.result();
        if let Some(t) = &truth {
            report.recovery = Some(recovery(t, &res.eps_dps, &res.euler_deg, &res.r, &res.h, &res.c_b_m));
        }
        let pass = &out.last;
        let bias = still.unwrap_or(res.eps_dps);
        let win = &window[window.len() - pass.attitude.len()..];
        let gyro = gyro_attitude(win, &bias);
        plots.attitude = compare_attitude(&pass.attitude, &gyro)?;
        report.attitude_rms_deg = Some(rms_deg(&plots.attitude));
        if let Some(sim) = &stream.sim {
            let i0 = stream.samples.len() - stream.samples.iter().rev().take_while(|s| s.t >= pass.start).count();
            // the filter's inertial frame is the body frame at the window start
            let c0 = sim.output.attitudes[i0].transpose();
            plots.attitude_truth = pass
                .attitude
                .iter()
                .zip(&sim.output.attitudes[i0..])
                .map(|((t, c), ct)| (*t, log_so3(&(c * (c0 * ct).transpose())).norm().to_degrees()))
                .collect();
            let ms = plots.attitude_truth.iter().map(|(_, a)| a * a).sum::<f64>() / plots.attitude_truth.len().max(1) as f64;
            report.attitude_truth_rms_deg = Some(ms.sqrt());
        }
        plots.history = pass.causal_history();
        report.ekf = Some(res.clone());
        report.ekf_first_pass = out.first_pass.as_ref().map(|p| p.result.clone());
        ekf_out = Some(out);
    } else {
        let b = run_batch(cfg, window)?;
        if let Some(t) = &truth {
            report.recovery = Some(recovery(t, &b.eps_dps, &b.euler_deg, &b.r, &b.h, &b.c_b_m));
        }
        report.batch = Some(b);
    }
    Ok(RunArtifacts { report, plots, ekf: ekf_out })
}
