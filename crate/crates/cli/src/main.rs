use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use magcal::io::config::{Loaded, Mode, Source};
use magcal::io::dataset::{write_csv_file, DatasetSpec};
use magcal::io::report::{compare_reports, load_report, write_artifacts};
use magcal::io::run::{load_stream, observability, run_on_stream};
use magcal::io::RunConfig;
use magcal::observability::Verdict;
use magcal::sim::SimTruth;
use magcal::Error;

/// Magnetometer calibration and alignment to inertial sensors.
#[derive(Parser)]
#[command(name = "magcal", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Calibrate with the configured mode and write the report and plot CSVs.
    Run {
        config: PathBuf,
        /// Output directory (overrides the configuration).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a simulated dataset (CSV, dataset description, truth).
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Observability Gramian diagnostics for the configured data.
    Obsv {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two finished runs.
    Report {
        /// Two report directories or report.json files.
        #[arg(long, num_args = 2, value_names = ["RUN_A", "RUN_B"], required = true)]
        compare: Vec<PathBuf>,
    },
}

fn load(path: &Path, out: Option<PathBuf>) -> anyhow::Result<Loaded> {
    let mut l = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(o) = out {
        l.config.output.dir = o;
    }
    Ok(l)
}

fn cmd_run(path: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let l = load(path, out)?;
    let stream = load_stream(&l.config)?;
    let art = run_on_stream(&l.config, &l.hash, &stream)?;
    print!("{}", art.report);
    let plots = l.config.output.plots.then_some(&art.plots);
    let files = write_artifacts(&l.config.output.dir, &art.report, plots)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct TruthFile<'a> {
    seed: u64,
    r: [[f64; 3]; 3],
    euler_deg: [f64; 3],
    bias_dps: [f64; 3],
    inclination_deg: f64,
    truth: &'a SimTruth,
}

fn cmd_simulate(path: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let l = load(path, out)?;
    let Source::Simulation(spec) = &l.config.source else {
        bail!(Error::Config("simulate needs a \"simulation\" source".into()));
    };
    let sim = spec.generate(&l.config.noise, l.config.seed)?;
    let dir = &l.config.output.dir;
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("data.csv");
    write_csv_file(&csv, &sim.output.samples)?;
    let mut ds = DatasetSpec::new("data.csv", spec.profile.sample_rate);
    ds.stationary = sim.trajectory.still_windows();
    let ds_path = dir.join("dataset.json");
    std::fs::write(&ds_path, serde_json::to_string_pretty(&ds)?)?;
    let ds = DatasetSpec { path: PathBuf::from("data.csv"), ..ds };
    let truth = TruthFile {
        seed: l.config.seed,
        r: spec.r,
        euler_deg: spec.euler_deg,
        bias_dps: spec.bias_dps,
        inclination_deg: spec.inclination_deg,
        truth: &sim.truth,
    };
    let truth_path = dir.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)?;
    let mut run_cfg = l.config.clone();
    run_cfg.source = Source::Dataset(ds);
    run_cfg.output.dir = dir.join("run");
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&run_cfg)?)?;
    println!("{} samples over {:.2} s", sim.output.samples.len(), spec.profile.duration());
    for f in [csv, ds_path, truth_path, cfg_path] {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_obsv(path: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let l = load(path, out)?;
    let stream = load_stream(&l.config)?;
    let rep = observability(&l.config, &stream.samples, None)?;
    println!("{rep}");
    let dir = &l.config.output.dir;
    std::fs::create_dir_all(dir)?;
    let f = dir.join("eigen_ratio.csv");
    let mut w = csv::Writer::from_path(&f)?;
    w.write_record(["t", "log10_ratio_gy"])?;
    for (t, r) in &rep.log_ratio_series {
        w.write_record([t.to_string(), r.to_string()])?;
    }
    w.flush()?;
    let j = dir.join("obsv.json");
    std::fs::write(&j, serde_json::to_string_pretty(&rep)?)?;
    println!("wrote {}\nwrote {}", f.display(), j.display());
    let verdict = if l.config.mode == Mode::BatchThm22 { rep.accelerometer } else { rep.magnetometer_gyro };
    if verdict == Verdict::Unobservable {
        bail!(Error::Unobservable(format!("calibration is not determined by these data ({})", l.config.mode.name())));
    }
    Ok(())
}

fn cmd_report(paths: &[PathBuf]) -> anyhow::Result<()> {
    let a = load_report(&paths[0])?;
    let b = load_report(&paths[1])?;
    print!("{}", compare_reports(&a, &b));
    Ok(())
}

/// 2: invalid input or configuration, 3: data do not determine the calibration.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(
            Error::Config(_)
            | Error::Parse { .. }
            | Error::MissingUnit(_)
            | Error::NonMonotoneTime { .. }
            | Error::InvalidInput(_)
            | Error::OutOfRange { .. }
            | Error::Json(_)
            | Error::Csv(_),
        ) => 2,
        Some(Error::Unobservable(_) | Error::RankDeficient { .. } | Error::Singular(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { config, out } => cmd_run(config, out.clone()),
        Cmd::Simulate { config, out } => cmd_simulate(config, out.clone()),
        Cmd::Obsv { config, out } => cmd_obsv(config, out.clone()),
        Cmd::Report { compare } => cmd_report(compare),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
