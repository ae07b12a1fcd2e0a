//! Run reports: a text table for people, JSON for regression checks, and
//! plot CSVs.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ekf::CalibResult;
use crate::error::{Error, Result};
use crate::observability::ObsvReport;
use crate::{Mat3, Vec3};

use super::config::Mode;
use super::dataset::Gap;
use super::run::{BatchResult, Plots};

/// Simulated truth in report units.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TruthSummary {
    pub r: Mat3,
    pub h: Vec3,
    pub euler_deg: [f64; 3],
    pub eps_dps: Vec3,
    pub inclination_deg: f64,
}

/// Largest absolute estimation errors.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Recovery {
    pub bias_dps: f64,
    /// Largest Euler angle difference, degrees.
    pub euler_deg: f64,
    /// Angle of the misalignment error rotation, degrees.
    pub misalignment_deg: f64,
    pub r: f64,
    pub h: f64,
}

/// Angles in degrees, rates in deg/s.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    /// SHA-256 of the configuration file.
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    pub window: (f64, f64),
    pub ekf: Option<CalibResult>,
    pub ekf_first_pass: Option<CalibResult>,
    pub batch: Option<BatchResult>,
    pub obsv: ObsvReport,
    pub still_bias_dps: Option<Vec3>,
    pub truth: Option<TruthSummary>,
    pub recovery: Option<Recovery>,
    /// RMS Euler discrepancy between the filter and gyro-only attitude.
    pub attitude_rms_deg: Option<f64>,
    /// RMS rotation angle between the filter and true attitude.
    pub attitude_truth_rms_deg: Option<f64>,
    pub gaps: Vec<Gap>,
    pub warnings: Vec<String>,
}

fn v3(v: &Vec3) -> String {
    format!("{:>10.4} {:>10.4} {:>10.4}", v.x, v.y, v.z)
}

fn row(f: &mut fmt::Formatter<'_>, label: &str, v: &Vec3) -> fmt::Result {
    writeln!(f, "  {label:<20} {}", v3(v))
}

fn upper(m: &Mat3) -> [f64; 6] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode {}  seed {}  config {}", self.mode.name(), self.seed, &self.config_hash[..12.min(self.config_hash.len())])?;
        writeln!(f, "window {:.2} to {:.2} s, {} samples", self.window.0, self.window.1, self.samples)?;
        writeln!(f)?;
        writeln!(f, "Gyroscope bias (deg/s)  {:>10} {:>10} {:>10}", "x", "y", "z")?;
        if let Some(e) = &self.ekf {
            row(f, "EKF", &e.eps_dps)?;
        }
        if let Some(e) = &self.ekf_first_pass {
            row(f, "EKF first pass", &e.eps_dps)?;
        }
        if let Some(b) = &self.batch {
            row(f, "batch", &b.eps_dps)?;
        }
        if let Some(b) = &self.still_bias_dps {
            row(f, "still averaging", b)?;
        }
        if let Some(t) = &self.truth {
            row(f, "truth", &t.eps_dps)?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "Magnetometer parameters  {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
            "R11", "R12", "R13", "R22", "R23", "R33", "hx", "hy", "hz", "roll", "pitch", "yaw"
        )?;
        let mut params = |label: &str, r: &Mat3, h: &Vec3, e: &[f64; 3]| -> fmt::Result {
            let u = upper(r);
            writeln!(
                f,
                "  {label:<22} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} | {:>8.4} {:>8.4} {:>8.4} | {:>8.3} {:>8.3} {:>8.3}",
                u[0], u[1], u[2], u[3], u[4], u[5], h.x, h.y, h.z, e[0], e[1], e[2]
            )
        };
        if let Some(e) = &self.ekf {
            params("EKF", &e.r, &e.h, &e.euler_deg)?;
        }
        if let Some(e) = &self.ekf_first_pass {
            params("EKF first pass", &e.r, &e.h, &e.euler_deg)?;
        }
        if let Some(b) = &self.batch {
            params("batch", &b.r, &b.h, &b.euler_deg)?;
        }
        if let Some(t) = &self.truth {
            params("truth", &t.r, &t.h, &t.euler_deg)?;
        }
        writeln!(f)?;
        if let Some(e) = &self.ekf {
            writeln!(f, "Filter statistics")?;
            if let Some(p) = &self.ekf_first_pass {
                writeln!(f, "  magnetometer ANIS      {:.3} (first pass {:.3})", e.anis_mag, p.anis_mag)?;
            } else {
                writeln!(f, "  magnetometer ANIS      {:.3}", e.anis_mag)?;
            }
            writeln!(
                f,
                "  accelerometer accepted {:.1}% ({} of {} updates)",
                100.0 * e.accel_accept_ratio,
                e.accel_accepted,
                e.mag_updates
            )?;
            writeln!(f, "  inclination            {:.3} deg", e.inclination_deg)?;
            if let Some(a) = self.attitude_rms_deg {
                writeln!(f, "  attitude vs gyro-only  {a:.3} deg RMS")?;
            }
            if let Some(a) = self.attitude_truth_rms_deg {
                writeln!(f, "  attitude vs truth      {a:.3} deg RMS")?;
            }
            writeln!(f)?;
        }
        if let Some(b) = &self.batch {
            if let Some(i) = b.inclination_deg {
                writeln!(f, "Batch inclination {i:.3} deg")?;
                writeln!(f)?;
            }
        }
        if let Some(r) = &self.recovery {
            writeln!(f, "Errors against truth")?;
            writeln!(f, "  gyro bias {:.4} deg/s, Euler {:.4} deg, misalignment {:.4} deg", r.bias_dps, r.euler_deg, r.misalignment_deg)?;
            writeln!(f, "  R {:.2e}, h {:.2e}", r.r, r.h)?;
            writeln!(f)?;
        }
        writeln!(f, "{}", self.obsv)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Writes `report.txt`, `report.json` and, optionally, the plot CSVs into `dir`.
/// Returns the written paths.
pub fn write_artifacts(dir: &Path, report: &RunReport, plots: Option<&Plots>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let txt = dir.join("report.txt");
    std::fs::write(&txt, report.to_string())?;
    out.push(txt);
    let json = dir.join("report.json");
    std::fs::write(&json, serde_json::to_string_pretty(report)?)?;
    out.push(json);
    let Some(p) = plots else { return Ok(out) };

    let path = dir.join("eigen_ratio.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["t", "log10_ratio_gy"])?;
    for (t, r) in &p.log_ratio {
        w.write_record([t.to_string(), r.to_string()])?;
    }
    w.flush()?;
    out.push(path);

    if !p.history.is_empty() {
        let path = dir.join("innovations.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["t", "nu_x", "nu_y", "nu_z", "bound_x", "bound_y", "bound_z", "nis", "accel_accepted"])?;
        for r in &p.history {
            let mut rec: Vec<String> = vec![r.t.to_string()];
            rec.extend(r.innovation.iter().chain(&r.bound3).chain([&r.nis]).map(|v| v.to_string()));
            rec.push(u8::from(r.accel_accepted).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        out.push(path);

        let path = dir.join("states.csv");
        let mut w = csv_writer(&path)?;
        let mut header = vec!["t".to_string()];
        header.extend(["eps_x_dps", "eps_y_dps", "eps_z_dps"].map(String::from));
        for j in 1..=3 {
            for i in 1..=3 {
                header.push(format!("s{i}{j}"));
            }
        }
        header.extend(["hx", "hy", "hz", "mi_x", "mi_y", "mi_z", "gi_x", "gi_y", "gi_z"].map(String::from));
        w.write_record(&header)?;
        for r in &p.history {
            let mut rec = vec![r.t];
            rec.extend(r.eps_dps.iter().chain(&r.s).chain(&r.h).chain(&r.m_i).chain(&r.g_i));
            w.write_record(rec.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        out.push(path);
    }

    if !p.attitude.is_empty() {
        let path = dir.join("attitude.csv");
        let mut w = csv_writer(&path)?;
        let truth = p.attitude_truth.len() == p.attitude.len();
        let mut header = vec!["t", "roll_deg", "pitch_deg", "yaw_deg"];
        if truth {
            header.push("truth_angle_deg");
        }
        w.write_record(&header)?;
        for (k, (t, e)) in p.attitude.iter().enumerate() {
            let mut rec = vec![*t, e[0], e[1], e[2]];
            if truth {
                rec.push(p.attitude_truth[k].1);
            }
            w.write_record(rec.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        out.push(path);
    }
    Ok(out)
}

/// Reads `report.json`, given either the file or its directory.
pub fn load_report(path: &Path) -> Result<RunReport> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let text = std::fs::read(&file).map_err(|e| Error::InvalidInput(format!("{}: {e}", file.display())))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Headline numbers of a report, in a fixed order.
fn headline(r: &RunReport) -> Vec<(String, Option<f64>)> {
    let (eps, rr, h, e, anis, acc) = if let Some(x) = &r.ekf {
        (Some(x.eps_dps), Some(x.r), Some(x.h), Some(x.euler_deg), Some(x.anis_mag), Some(x.accel_accept_ratio))
    } else if let Some(b) = &r.batch {
        (Some(b.eps_dps), Some(b.r), Some(b.h), Some(b.euler_deg), None, None)
    } else {
        (None, None, None, None, None, None)
    };
    let mut out = Vec::new();
    for (i, c) in ["x", "y", "z"].iter().enumerate() {
        out.push((format!("bias_{c} (deg/s)"), eps.map(|v| v[i])));
    }
    for (i, name) in ["R11", "R12", "R13", "R22", "R23", "R33"].iter().enumerate() {
        out.push((name.to_string(), rr.map(|m| upper(&m)[i])));
    }
    for (i, c) in ["x", "y", "z"].iter().enumerate() {
        out.push((format!("h{c}"), h.map(|v| v[i])));
    }
    for (i, name) in ["roll (deg)", "pitch (deg)", "yaw (deg)"].iter().enumerate() {
        out.push((name.to_string(), e.map(|v| v[i])));
    }
    out.push(("ANIS".into(), anis));
    out.push(("accel accepted".into(), acc));
    out.push(("attitude RMS (deg)".into(), r.attitude_rms_deg));
    out.push(("attitude vs truth RMS (deg)".into(), r.attitude_truth_rms_deg));
    out
}

/// Side-by-side table of two reports with their differences.
pub fn compare_reports(a: &RunReport, b: &RunReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"));
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:>14} {:>14} {:>14}", "quantity", a.mode.name(), b.mode.name(), "B - A");
    for ((name, x), (_, y)) in headline(a).into_iter().zip(headline(b)) {
        let d = x.zip(y).map(|(x, y)| y - x);
        let _ = writeln!(s, "{name:<28} {:>14} {:>14} {:>14}", fmt(x), fmt(y), fmt(d));
    }
    if a.config_hash == b.config_hash && a.seed == b.seed {
        let _ = writeln!(s, "both runs share configuration {}", &a.config_hash[..12.min(a.config_hash.len())]);
    }
    s
}
