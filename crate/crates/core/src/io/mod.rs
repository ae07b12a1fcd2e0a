//! Dataset ingest, run configuration, orchestration and reporting.

pub mod config;
pub mod dataset;
pub mod report;
pub mod run;

pub use config::{Mode, RunConfig, SimSpec, Source};
pub use dataset::{ingest_csv, read_csv, write_csv, DatasetSpec};
pub use report::{compare_reports, load_report, write_artifacts, RunReport};
pub use run::{compare_attitude, run_calibration, still_average_bias, RunArtifacts};
