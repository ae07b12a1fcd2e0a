//! JSON run configuration. One file fully determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batch::{Derivative, Integrator};
use crate::ekf::EkfConfig;
use crate::error::{Error, Result};
use crate::observability::DEFAULT_TOL;
use crate::sim::{
    alternating_windows, calibration_matrix, gen_trajectory, inject_acceleration, simulate, Disturbance,
    MotionProfile, NoiseConfig, SimOutput, SimTruth, Trajectory, EARTH_RATE,
};
use crate::so3::{euler_to_dcm, Euler, UpperTriangular3};
use crate::{Mat3, Vec3};

use super::dataset::DatasetSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ekf,
    EkfNoaccel,
    EkfTwopass,
    BatchThm21,
    BatchThm22,
}

impl Mode {
    pub fn is_ekf(self) -> bool {
        matches!(self, Mode::Ekf | Mode::EkfNoaccel | Mode::EkfTwopass)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ekf => "ekf",
            Mode::EkfNoaccel => "ekf-noaccel",
            Mode::EkfTwopass => "ekf-twopass",
            Mode::BatchThm21 => "batch-thm21",
            Mode::BatchThm22 => "batch-thm22",
        }
    }
}

/// Noise densities in user units; converted to radians at load.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Gyro white noise, deg/√s.
    pub gyro_deg_rt_s: f64,
    /// Gyro bias random walk, deg/√s³.
    pub bias_walk_deg_rt_s3: f64,
    /// Magnetometer white noise, normalized units.
    pub mag: f64,
    /// Accelerometer noise, m/s². Defaults to three times the gate threshold.
    pub accel: Option<f64>,
    /// Random walk of the inertial magnetic vector, 1/√s. Defaults to Earth rate.
    pub mag_vector_walk: Option<f64>,
    /// Random walk of the inertial gravity vector, m/√s⁵. Defaults to 9.8 × Earth rate.
    pub gravity_walk: Option<f64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gyro_deg_rt_s: 0.01,
            bias_walk_deg_rt_s3: 1e-4,
            mag: 0.005,
            accel: None,
            mag_vector_walk: None,
            gravity_walk: None,
        }
    }
}

impl NoiseSpec {
    pub fn to_noise(&self, t_md: f64) -> NoiseConfig {
        NoiseConfig {
            sigma_g: self.gyro_deg_rt_s.to_radians(),
            sigma_eps: self.bias_walk_deg_rt_s3.to_radians(),
            sigma_m: self.mag,
            sigma_a: self.accel.unwrap_or(3.0 * t_md),
            sigma_mi: self.mag_vector_walk.unwrap_or(EARTH_RATE),
            sigma_gi: self.gravity_walk.unwrap_or(9.8 * EARTH_RATE),
        }
    }
}

/// Disturbance applied to alternating windows of the simulated accelerometer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub disturbance: Disturbance,
    /// Length of each disturbed (and each clean) window, s.
    pub period: f64,
}

/// Synthetic data source with known truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    /// Upper-triangular intrinsic matrix, row-major.
    pub r: [[f64; 3]; 3],
    pub h: [f64; 3],
    /// Roll, pitch, yaw of the misalignment `C_b^m`, degrees.
    pub euler_deg: [f64; 3],
    pub bias_dps: [f64; 3],
    pub inclination_deg: f64,
    pub profile: MotionProfile,
    /// Sensor noise; the run's noise block when absent.
    pub noise: Option<NoiseSpec>,
    /// Gate threshold used to derive the default accelerometer noise.
    pub t_md: f64,
    pub disturbance: Option<DisturbanceSpec>,
    pub earth_rate: bool,
    /// Latitude for the Earth-rate vector, degrees.
    pub latitude_deg: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            h: [0.0; 3],
            euler_deg: [0.0; 3],
            bias_dps: [0.0; 3],
            inclination_deg: 43.14,
            profile: MotionProfile::hand_tumble(5.0, 140.0, 1.5),
            noise: None,
            t_md: 0.03,
            disturbance: None,
            earth_rate: false,
            latitude_deg: 45.0,
        }
    }
}

/// Simulated stream plus everything needed to score it.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub truth: SimTruth,
    pub trajectory: Trajectory,
    pub output: SimOutput<f64>,
}

impl SimSpec {
    pub fn r_matrix(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.r[i][j])
    }

    pub fn euler(&self) -> Euler<f64> {
        let [a, b, c] = self.euler_deg;
        Euler::from_degrees(a, b, c)
    }

    pub fn validate(&self) -> Result<()> {
        UpperTriangular3::new(self.r_matrix()).map_err(|_| Error::Config("simulation r must be upper triangular".into()))?;
        if (0..3).any(|i| !(self.r[i][i] > 0.0)) {
            return Err(Error::Config("simulation r needs a positive diagonal".into()));
        }
        if let Some(d) = &self.disturbance {
            if !(d.period > 0.0) {
                return Err(Error::Config("disturbance period must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn truth(&self, run_noise: &NoiseSpec) -> SimTruth {
        let noise = self.noise.unwrap_or(*run_noise).to_noise(self.t_md);
        let mut tr = SimTruth::ned(self.inclination_deg, noise);
        tr.s = calibration_matrix(&self.r_matrix(), &euler_to_dcm(&self.euler()).transpose());
        tr.h = Vec3::from(self.h);
        tr.eps = Vec3::from(self.bias_dps).map(f64::to_radians);
        tr.sample_rate = self.profile.sample_rate;
        if self.earth_rate {
            let lat = self.latitude_deg.to_radians();
            tr.earth_rate = Some(Vec3::new(lat.cos(), 0.0, -lat.sin()) * EARTH_RATE);
        }
        tr
    }

    pub fn generate(&self, run_noise: &NoiseSpec, seed: u64) -> Result<Simulated> {
        self.validate()?;
        let truth = self.truth(run_noise);
        let trajectory = gen_trajectory(&self.profile, seed)?;
        let mut output = simulate::<f64>(&truth, &trajectory, seed)?;
        if let Some(d) = &self.disturbance {
            let last = trajectory.samples.last().map_or(0.0, |s| s.t);
            let first = trajectory.samples.first().map_or(0.0, |s| s.t);
            let windows: Vec<_> = alternating_windows(first, last + 1.0 / self.profile.sample_rate, d.period)
                .into_iter()
                .filter(|&(a, _)| a <= last)
                .map(|(a, b)| (a, b.min(last + 1e-10)))
                .collect();
            output.samples = inject_acceleration(&output.samples, &windows, d.disturbance)?;
        }
        Ok(Simulated { truth, trajectory, output })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Dataset(DatasetSpec),
    Simulation(SimSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSettings {
    pub derivative: Derivative,
    pub integrator: Integrator,
    /// Relative eigenvalue threshold for rank decisions.
    pub tol: f64,
}

impl Default for BatchSettings {
    fn default() -> Self {
        Self { derivative: Derivative::default(), integrator: Integrator::default(), tol: DEFAULT_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Write the plot CSVs next to the report.
    pub plots: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), plots: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub source: Source,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub filter: EkfConfig,
    #[serde(default)]
    pub batch: BatchSettings,
    #[serde(default)]
    pub output: OutputSpec,
    /// Gyro standard deviation above which a stationary window counts as moving, deg/s.
    #[serde(default = "default_still_std")]
    pub still_max_std_dps: f64,
    /// Run even when the observability check fails.
    #[serde(default)]
    pub allow_unobservable: bool,
    /// Relative threshold for the observability verdicts.
    #[serde(default = "default_obsv_tol")]
    pub obsv_tol: f64,
}

fn default_still_std() -> f64 {
    1.0
}

fn default_obsv_tol() -> f64 {
    DEFAULT_TOL
}

/// A parsed configuration with its provenance.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    /// SHA-256 of the configuration file bytes, hex.
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    /// Filter settings with the noise block and mode applied.
    pub fn ekf_config(&self) -> EkfConfig {
        let mut cfg = self.filter.clone();
        cfg.noise = self.noise.to_noise(cfg.t_md);
        match self.mode {
            Mode::EkfNoaccel => cfg.use_accel = false,
            Mode::EkfTwopass => cfg.two_pass = true,
            _ => {}
        }
        if let Source::Dataset(d) = &self.source {
            if let Some((a, b)) = d.window {
                cfg.start = cfg.start.or(Some(a));
                cfg.stop = cfg.stop.or(Some(b));
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.ekf_config().validate()?;
        match &self.source {
            Source::Dataset(d) => d.validate()?,
            Source::Simulation(s) => s.validate()?,
        }
        if !(self.batch.tol > 0.0 && self.batch.tol < 1.0) {
            return Err(Error::Config("batch.tol must lie in (0, 1)".into()));
        }
        if !(self.obsv_tol > 0.0 && self.obsv_tol < 1.0) {
            return Err(Error::Config("obsv_tol must lie in (0, 1)".into()));
        }
        if !(self.still_max_std_dps > 0.0) {
            return Err(Error::Config("still_max_std_dps must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Loaded> {
        let config: RunConfig = serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(Loaded { config, hash: sha256_hex(bytes) })
    }

    /// Loads a configuration file. A relative dataset path is taken from the
    /// file's directory; the output directory is relative to the working directory.
    pub fn load(path: &Path) -> Result<Loaded> {
        let bytes = std::fs::read(path)?;
        let mut loaded = Self::from_json(&bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Source::Dataset(d) = &mut loaded.config.source {
            d.resolve(base);
        }
        Ok(loaded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{ "mode": "ekf-noaccel", "source": { "simulation": {} } }"#;

    #[test]
    fn minimal_config_uses_reference_settings() {
        let l = RunConfig::from_json(MINIMAL.as_bytes()).unwrap();
        let cfg = l.config.ekf_config();
        assert!(!cfg.use_accel);
        assert_eq!(cfg.noise, NoiseConfig::reference(0.03));
        assert_eq!(l.hash.len(), 64);
    }

    #[test]
    fn degree_units_convert_at_load() {
        let text = r#"{ "mode": "ekf", "source": { "simulation": {} },
            "noise": { "gyro_deg_rt_s": 0.5, "accel": 0.2 }, "filter": { "t_md": 0.1 } }"#;
        let cfg = RunConfig::from_json(text.as_bytes()).unwrap().config.ekf_config();
        assert_eq!(cfg.noise.sigma_g, 0.5f64.to_radians());
        assert_eq!(cfg.noise.sigma_a, 0.2);
        assert_eq!(cfg.t_md, 0.1);
        assert_eq!(cfg.noise.sigma_g.to_degrees(), 0.5);
    }

    #[test]
    fn validation_errors() {
        for bad in [
            r#"{ "mode": "ekf", "source": { "simulation": {} }, "filter": { "t_md": -1 } }"#,
            r#"{ "mode": "nope", "source": { "simulation": {} } }"#,
            r#"{ "mode": "ekf", "source": { "simulation": { "r": [[1,0,0],[0.5,1,0],[0,0,1]] } } }"#,
            r#"{ "mode": "ekf", "source": { "dataset": { "path": "x.csv", "sample_rate": 100 } } }"#,
            r#"{ "mode": "ekf", "source": { "simulation": {} }, "filter": { "start": 5, "stop": 1 } }"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad.as_bytes()), Err(Error::Config(_) | Error::MissingUnit(_))), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_bytes() {
        let a = RunConfig::from_json(MINIMAL.as_bytes()).unwrap().hash;
        let b = RunConfig::from_json(format!("{MINIMAL} ").as_bytes()).unwrap().hash;
        assert_ne!(a, b);
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn simulation_matches_truth() {
        let spec = SimSpec {
            r: [[1.1, 0.05, 0.0], [0.0, 0.9, 0.02], [0.0, 0.0, 1.05]],
            h: [0.1, -0.2, 0.3],
            euler_deg: [1.0, -2.0, 3.0],
            profile: MotionProfile::hand_tumble(1.0, 5.0, 1.0),
            noise: Some(NoiseSpec { gyro_deg_rt_s: 0.0, bias_walk_deg_rt_s3: 0.0, mag: 0.0, accel: Some(0.0), ..Default::default() }),
            ..Default::default()
        };
        let sim = spec.generate(&NoiseSpec::default(), 3).unwrap();
        let r = spec.r_matrix();
        let h = Vec3::from(spec.h);
        for s in &sim.output.samples {
            assert!(((r * (s.mag - h)).norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn disturbance_hits_half_the_samples() {
        let spec = SimSpec {
            profile: MotionProfile::hand_tumble(1.0, 9.0, 1.0),
            disturbance: Some(DisturbanceSpec { disturbance: Disturbance::Constant { vector: [0.0, 0.0, 1.0] }, period: 1.0 }),
            ..Default::default()
        };
        let clean = SimSpec { disturbance: None, ..spec.clone() }.generate(&NoiseSpec::default(), 1).unwrap();
        let dist = spec.generate(&NoiseSpec::default(), 1).unwrap();
        let n = clean.output.samples.len();
        let hit = clean.output.samples.iter().zip(&dist.output.samples).filter(|(a, b)| a.accel != b.accel).count();
        assert!((hit as f64 / n as f64 - 0.5).abs() < 0.01, "{hit} of {n}");
    }
}
