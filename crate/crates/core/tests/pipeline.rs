use magcal::io::config::Loaded;
use magcal::io::dataset::{ingest_csv, write_csv_file, DatasetSpec};
use magcal::io::report::{compare_reports, load_report, write_artifacts};
use magcal::io::run::{gyro_attitude, load_stream, run_on_stream};
use magcal::io::{run_calibration, RunConfig, Source};
use magcal::so3::log_so3;
use magcal::{Error, Vec3};

fn sim_config(mode: &str, seed: u64) -> Loaded {
    let json = format!(
        r#"{{
  "mode": "{mode}",
  "seed": {seed},
  "source": {{
    "simulation": {{
      "r": [[1.0021, -0.0039, 0.0011], [0.0, 0.9969, 0.0019], [0.0, 0.0, 1.0058]],
      "h": [-0.5018, 0.0421, 0.2379],
      "euler_deg": [0.005, 0.014, -0.120],
      "bias_dps": [-0.22, 0.17, 0.25],
      "profile": {{ "segments": [
        {{ "duration": 5.0 }},
        {{ "duration": 60.0, "axes": [true, true, true], "peak_rate": 1.5 }}
      ], "sample_rate": 100.0 }}
    }}
  }}
}}"#
    );
    RunConfig::from_json(json.as_bytes()).unwrap()
}

#[test]
fn csv_round_trip_reproduces_the_in_memory_run() {
    let l = sim_config("ekf", 3);
    let direct = run_calibration(&l.config, &l.hash).unwrap();

    let stream = load_stream(&l.config).unwrap();
    let sim = stream.sim.as_ref().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_csv_file(&csv, &sim.output.samples).unwrap();
    let mut ds = DatasetSpec::new(&csv, 100.0);
    ds.stationary = sim.trajectory.still_windows();
    let ingested = ingest_csv(&ds).unwrap();
    assert_eq!(ingested.samples, sim.output.samples);
    assert!(ingested.gaps.is_empty());

    let mut cfg = l.config.clone();
    cfg.source = Source::Dataset(ds);
    let from_csv = run_calibration(&cfg, &l.hash).unwrap();
    let (a, b) = (direct.report.ekf.unwrap(), from_csv.report.ekf.unwrap());
    assert_eq!(a.r, b.r);
    assert_eq!(a.h, b.h);
    assert_eq!(a.c_b_m, b.c_b_m);
    assert_eq!(a.eps_dps, b.eps_dps);
    assert_eq!(direct.report.still_bias_dps, from_csv.report.still_bias_dps);
}

#[test]
fn reports_are_deterministic_and_reload() {
    let l = sim_config("batch-thm21", 5);
    let a = run_calibration(&l.config, &l.hash).unwrap();
    let b = run_calibration(&l.config, &l.hash).unwrap();
    let ja = serde_json::to_string(&a.report).unwrap();
    assert_eq!(ja, serde_json::to_string(&b.report).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let files = write_artifacts(dir.path(), &a.report, Some(&a.plots)).unwrap();
    assert!(files.iter().any(|f| f.ends_with("report.json")));
    let back = load_report(dir.path()).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), ja);
    let table = compare_reports(&a.report, &back);
    assert!(table.contains("batch-thm21"));
}

#[test]
fn filter_with_and_without_accelerometer_agree() {
    let a = sim_config("ekf", 11);
    let n = sim_config("ekf-noaccel", 11);
    let ra = run_calibration(&a.config, &a.hash).unwrap().report;
    let rn = run_calibration(&n.config, &n.hash).unwrap().report;
    let (ea, en) = (ra.ekf.unwrap(), rn.ekf.unwrap());
    assert!((ea.c_b_m.transpose() * en.c_b_m - magcal::Mat3::identity()).norm() < 0.05);
    assert!((ea.eps_dps - en.eps_dps).norm() < 0.03, "{} vs {}", ea.eps_dps, en.eps_dps);
    assert!((ea.h - en.h).norm() < 0.02);
    let rec = ra.recovery.unwrap();
    assert!(rec.bias_dps < 0.03 && rec.euler_deg < 2.0, "{rec:?}");
}

#[test]
fn uncompensated_gyro_drifts_and_compensated_gyro_does_not() {
    let l = sim_config("ekf", 2);
    let stream = load_stream(&l.config).unwrap();
    let sim = stream.sim.as_ref().unwrap();
    let bias_dps = sim.truth.eps.map(f64::to_degrees);
    let c0 = sim.output.attitudes[0].transpose();
    let end_error = |b: &Vec3| {
        let att = gyro_attitude(&stream.samples, b);
        let (_, c) = att.last().unwrap();
        let ct = c0 * sim.output.attitudes.last().unwrap();
        log_so3(&(c.transpose() * ct)).norm().to_degrees()
    };
    let raw = end_error(&Vec3::zeros());
    let comp = end_error(&bias_dps);
    // 0.38 deg/s of bias over 65 s
    assert!(raw > 5.0, "raw drift {raw}");
    assert!(comp < 0.5, "compensated drift {comp}");
}

#[test]
fn stationary_stream_is_rejected_as_unobservable() {
    let json = br#"{ "mode": "ekf", "source": { "simulation": {
        "profile": { "segments": [ { "duration": 30.0 } ], "sample_rate": 100.0 } } } }"#;
    let l = RunConfig::from_json(json).unwrap();
    let stream = load_stream(&l.config).unwrap();
    match run_on_stream(&l.config, &l.hash, &stream) {
        Err(Error::Unobservable(_)) => {}
        other => panic!("expected Unobservable, got {:?}", other.map(|a| a.report.mode)),
    }
}

#[test]
fn config_errors_name_the_problem() {
    let bad = br#"{ "mode": "ekf", "source": { "dataset": { "path": "x.csv", "sample_rate": -1.0,
        "units": { "gyro": "deg_per_s", "accel": "m_per_s2", "mag": "raw" } } } }"#;
    let err = RunConfig::from_json(bad).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let unknown = br#"{ "mode": "kalman", "source": { "simulation": {} } }"#;
    assert!(matches!(RunConfig::from_json(unknown), Err(Error::Config(_))));
}
