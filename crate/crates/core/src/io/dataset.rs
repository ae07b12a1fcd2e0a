//! CSV ingest and export.
//!
//! Schema: header `t,gx,gy,gz,ax,ay,az,mx,my,mz`, one row per sample. Units
//! are declared in the dataset description, never inferred.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Sample, Vec3};

pub const HEADER: [&str; 10] = ["t", "gx", "gy", "gz", "ax", "ay", "az", "mx", "my", "mz"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GyroUnit {
    DegPerS,
    RadPerS,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelUnit {
    MPerS2,
    /// Multiples of standard gravity, 9.80665 m/s².
    G,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagUnit {
    Raw,
}

/// Unit declarations; every sensor must be declared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub gyro: Option<GyroUnit>,
    pub accel: Option<AccelUnit>,
    pub mag: Option<MagUnit>,
}

impl Units {
    pub const SI: Units = Units { gyro: Some(GyroUnit::RadPerS), accel: Some(AccelUnit::MPerS2), mag: Some(MagUnit::Raw) };

    fn resolved(&self) -> Result<(GyroUnit, AccelUnit)> {
        let g = self.gyro.ok_or(Error::MissingUnit("gyro"))?;
        let a = self.accel.ok_or(Error::MissingUnit("accel"))?;
        self.mag.ok_or(Error::MissingUnit("mag"))?;
        Ok((g, a))
    }
}

/// Source column name for each schema field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub t: String,
    pub gx: String,
    pub gy: String,
    pub gz: String,
    pub ax: String,
    pub ay: String,
    pub az: String,
    pub mx: String,
    pub my: String,
    pub mz: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        let [t, gx, gy, gz, ax, ay, az, mx, my, mz] = HEADER.map(String::from);
        Self { t, gx, gy, gz, ax, ay, az, mx, my, mz }
    }
}

impl ColumnMap {
    fn names(&self) -> [&str; 10] {
        [&self.t, &self.gx, &self.gy, &self.gz, &self.ax, &self.ay, &self.az, &self.mx, &self.my, &self.mz]
            .map(String::as_str)
    }
}

/// A recorded dataset and how to read it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub units: Units,
    /// Nominal sample rate, Hz.
    pub sample_rate: f64,
    /// Stationary windows `[start, end]`, s, used for still-averaged gyro bias.
    #[serde(default)]
    pub stationary: Vec<(f64, f64)>,
    /// Estimation window `[start, end]`, s.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
}

impl DatasetSpec {
    pub fn new(path: impl Into<PathBuf>, sample_rate: f64) -> Self {
        Self {
            path: path.into(),
            columns: ColumnMap::default(),
            units: Units::SI,
            sample_rate,
            stationary: Vec::new(),
            window: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.units.resolved()?;
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::Config("dataset sample_rate must be positive".into()));
        }
        for &(a, b) in self.stationary.iter().chain(self.window.iter()) {
            if !(b > a) {
                return Err(Error::Config(format!("window [{a}, {b}] is empty")));
            }
        }
        Ok(())
    }

    /// Resolves a relative data path against `base`.
    pub fn resolve(&mut self, base: &Path) {
        if self.path.is_relative() {
            self.path = base.join(&self.path);
        }
    }
}

/// Run of missing samples detected from the timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Time of the last sample before the gap.
    pub after: f64,
    pub missing: usize,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub samples: Vec<Sample>,
    pub gaps: Vec<Gap>,
    pub median_dt: f64,
}

/// Reads the dataset file described by `spec`.
pub fn ingest_csv(spec: &DatasetSpec) -> Result<Ingested> {
    spec.validate()?;
    let f = std::fs::File::open(&spec.path)?;
    read_csv(f, spec)
}

/// Reads samples from any CSV source using `spec`'s mapping, units and rate.
pub fn read_csv<R: Read>(src: R, spec: &DatasetSpec) -> Result<Ingested> {
    let (gyro_unit, accel_unit) = spec.units.resolved()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    let header = rdr.headers()?.clone();
    let mut idx = [0usize; 10];
    for (slot, name) in idx.iter_mut().zip(spec.columns.names()) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column '{name}'") })?;
    }
    let g_scale = match gyro_unit {
        GyroUnit::DegPerS => Some(std::f64::consts::PI / 180.0),
        GyroUnit::RadPerS => None,
    };
    let a_scale = match accel_unit {
        AccelUnit::G => Some(9.80665),
        AccelUnit::MPerS2 => None,
    };
    let scale = |v: Vec3, s: Option<f64>| s.map_or(v, |s| v * s);
    let mut samples: Vec<Sample> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut v = [0.0; 10];
        for (k, (&i, name)) in idx.iter().zip(HEADER).enumerate() {
            let field = rec.get(i).ok_or_else(|| Error::Parse { line, msg: format!("missing field '{name}'") })?;
            v[k] = field
                .parse::<f64>()
                .map_err(|e| Error::Parse { line, msg: format!("column '{name}': {e}") })?;
            if !v[k].is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite value in column '{name}'") });
            }
        }
        if let Some(prev) = samples.last() {
            if !(v[0] > prev.t) {
                return Err(Error::NonMonotoneTime { line });
            }
        }
        samples.push(Sample {
            t: v[0],
            gyro: scale(Vec3::new(v[1], v[2], v[3]), g_scale),
            accel: scale(Vec3::new(v[4], v[5], v[6]), a_scale),
            mag: Vec3::new(v[7], v[8], v[9]),
        });
    }
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!("dataset holds {} samples; at least 2 are needed", samples.len())));
    }
    let mut dts: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    dts.sort_by(f64::total_cmp);
    let median_dt = dts[dts.len() / 2];
    let nominal = 1.0 / spec.sample_rate;
    if ((median_dt - nominal) / nominal).abs() > 0.01 {
        return Err(Error::Config(format!(
            "declared rate {} Hz does not match the median sample spacing ({:.3} Hz)",
            spec.sample_rate,
            1.0 / median_dt
        )));
    }
    let gaps = samples
        .windows(2)
        .filter_map(|w| {
            let missing = ((w[1].t - w[0].t) / nominal).round() as usize;
            (missing >= 2).then(|| Gap { after: w[0].t, missing: missing - 1 })
        })
        .collect();
    Ok(Ingested { samples, gaps, median_dt })
}

/// Writes samples in SI units (rad/s, m/s², raw). Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(dst: W, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(dst);
    w.write_record(HEADER)?;
    for s in samples {
        let row = [s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z, s.mag.x, s.mag.y, s.mag.z];
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, samples: &[Sample]) -> Result<()> {
    write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rate: f64) -> DatasetSpec {
        DatasetSpec::new("unused.csv", rate)
    }

    fn rows(n: usize, dt: f64) -> String {
        let mut s = HEADER.join(",") + "\n";
        for k in 0..n {
            s += &format!("{},0.1,0.2,0.3,0,0,-9.8,0.5,0,0.8\n", k as f64 * dt);
        }
        s
    }

    #[test]
    fn well_formed_file() {
        let got = read_csv(rows(10, 0.01).as_bytes(), &spec(100.0)).unwrap();
        assert_eq!(got.samples.len(), 10);
        assert!(got.gaps.is_empty());
        assert_eq!(got.samples[3].gyro, Vec3::new(0.1, 0.2, 0.3));
    }

    #[test]
    fn nan_row_is_named() {
        let mut text = rows(5, 0.01);
        text += "0.05,NaN,0,0,0,0,-9.8,0.5,0,0.8\n";
        match read_csv(text.as_bytes(), &spec(100.0)) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 7);
                assert!(msg.contains("gx"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let text = rows(2, 0.01) + "0.02,0.1,x,0.3,0,0,-9.8,0.5,0,0.8\n";
        assert!(matches!(read_csv(text.as_bytes(), &spec(100.0)), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn time_must_increase() {
        let mut text = rows(4, 0.01);
        text += "0.02,0,0,0,0,0,-9.8,0.5,0,0.8\n";
        assert!(matches!(read_csv(text.as_bytes(), &spec(100.0)), Err(Error::NonMonotoneTime { line: 6 })));
    }

    #[test]
    fn missing_unit() {
        let mut s = spec(100.0);
        s.units.gyro = None;
        assert!(matches!(read_csv(rows(4, 0.01).as_bytes(), &s), Err(Error::MissingUnit("gyro"))));
    }

    #[test]
    fn rate_mismatch() {
        assert!(read_csv(rows(10, 0.01).as_bytes(), &spec(102.0)).is_err());
        assert!(read_csv(rows(10, 0.01).as_bytes(), &spec(100.5)).is_ok());
    }

    #[test]
    fn gaps_and_units() {
        let mut text = HEADER.join(",") + "\n";
        for t in [0.0, 0.01, 0.02, 0.05, 0.06, 0.07] {
            text += &format!("{t},90,0,0,0,0,-1,0.5,0,0.8\n");
        }
        let mut s = spec(100.0);
        s.units = Units { gyro: Some(GyroUnit::DegPerS), accel: Some(AccelUnit::G), mag: Some(MagUnit::Raw) };
        let got = read_csv(text.as_bytes(), &s).unwrap();
        assert_eq!(got.gaps, vec![Gap { after: 0.02, missing: 2 }]);
        assert!((got.samples[0].gyro.x - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(got.samples[0].accel.z, -9.80665);
    }

    #[test]
    fn remapped_columns() {
        let text = "time,wx,wy,wz,fx,fy,fz,bx,by,bz\n0,1,2,3,4,5,6,7,8,9\n0.01,1,2,3,4,5,6,7,8,9\n";
        let mut s = spec(100.0);
        s.columns = ColumnMap {
            t: "time".into(),
            gx: "wx".into(),
            gy: "wy".into(),
            gz: "wz".into(),
            ax: "fx".into(),
            ay: "fy".into(),
            az: "fz".into(),
            mx: "bx".into(),
            my: "by".into(),
            mz: "bz".into(),
        };
        let got = read_csv(text.as_bytes(), &s).unwrap();
        assert_eq!(got.samples[1].mag, Vec3::new(7.0, 8.0, 9.0));
        s.columns.mz = "nope".into();
        assert!(matches!(read_csv(text.as_bytes(), &s), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn write_read_identity() {
        let samples: Vec<Sample> = (0..50)
            .map(|k| {
                let x = k as f64;
                Sample {
                    t: x / 100.0,
                    gyro: Vec3::new(x.sin() / 3.0, 1e-17 * x, -x.cos()),
                    accel: Vec3::new(0.1 / (x + 1.0), 9.8, std::f64::consts::E),
                    mag: Vec3::new(1.0 / 7.0, -2.0f64.sqrt(), 1e300),
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &samples).unwrap();
        let back = read_csv(buf.as_slice(), &spec(100.0)).unwrap();
        assert_eq!(back.samples, samples);
    }
}
