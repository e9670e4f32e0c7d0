//! The `leanobs` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{
    load, read_reference, read_telemetry, save, write_errors, write_estimates, write_spectra, write_telemetry,
    write_truth,
};
use crate::pipeline::{compare, estimate, lap_time, score, simulate, RollReference, Score};
use crate::sensors::MeasurementFrame;
use crate::validation::run_invariant_suite;

#[derive(Debug, Parser)]
#[command(name = "leanobs", version, about = "Motorbike roll-angle observer")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a ride and write truth.csv and telemetry.csv.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ride duration, s.
        #[arg(long)]
        duration: Option<f64>,
        /// Append the true roll and speed to the telemetry.
        #[arg(long)]
        embed_truth: bool,
    },
    /// Run the observer over a telemetry file and write estimates.csv.
    Estimate {
        #[arg(long)]
        telemetry: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Forgetting factor of the EKF.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score the observer and the baselines against the truth.
    ///
    /// With `--telemetry` the recorded ride is used; otherwise `--trials`
    /// rides are simulated with consecutive seeds.
    Compare {
        #[arg(long)]
        telemetry: Option<PathBuf>,
        /// Truth file; the telemetry must embed the truth when absent.
        #[arg(long, requires = "telemetry")]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1, conflicts_with = "telemetry")]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the invariant suite.
    Validate,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Geometry(_)
        | Error::Infeasible(_)
        | Error::Underdetermined { .. }
        | Error::IllConditioned => 2,
        Error::Data(_)
        | Error::InsufficientData { .. }
        | Error::Io(_)
        | Error::DegenerateCourse { .. }
        | Error::ManoeuvreDegenerate { .. }
        | Error::DegenerateAcceleration => 3,
        _ => 4,
    }
}

/// Parses the process arguments and runs the command.
pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("leanobs: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Simulate {
            seed,
            out,
            duration,
            embed_truth,
        } => {
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = duration {
                cfg.truth.duration = d;
            }
            let dir = out_dir(out, &cfg)?;
            let (truth, frames) = simulate(&cfg)?;
            save(&dir.join("truth.csv"), |w| write_truth(w, &truth))?;
            save(&dir.join("telemetry.csv"), |w| {
                write_telemetry(w, &frames, embed_truth.then_some(&truth))
            })?;
            println!("wrote {} samples to {}", frames.len(), dir.display());
            Ok(())
        }
        Command::Estimate { telemetry, out, lambda } => {
            let mut cfg = cfg;
            if let Some(l) = lambda {
                cfg.ekf.lambda = l;
            }
            cfg.validate()?;
            let dir = out_dir(out, &cfg)?;
            let tel = load(&telemetry, read_telemetry)?;
            let records = estimate(&cfg, &tel.frames)?;
            save(&dir.join("estimates.csv"), |w| write_estimates(w, &records))?;
            println!("wrote {} estimates to {}", records.len(), dir.display());
            Ok(())
        }
        Command::Compare {
            telemetry,
            truth,
            out,
            trials,
            seed,
        } => {
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out_dir(out, &cfg)?;
            match telemetry {
                Some(tel) => {
                    let tel = load(&tel, read_telemetry)?;
                    let reference = match truth {
                        Some(p) => load(&p, read_reference)?,
                        None => tel
                            .reference
                            .ok_or_else(|| Error::Data("telemetry has no truth columns; pass --truth".into()))?,
                    };
                    let scores = compare_run(&cfg, &reference, &tel.frames, &dir)?;
                    print_scores(&scores);
                }
                None => {
                    if trials == 0 {
                        return Err(Error::Config("--trials must be positive".into()));
                    }
                    let results = run_trials(&cfg, trials, &dir)?;
                    for (k, scores) in results.iter().enumerate() {
                        if trials > 1 {
                            println!("trial {k} (seed {})", cfg.seed + k as u64);
                        }
                        print_scores(scores);
                    }
                }
            }
            Ok(())
        }
        Command::Validate => {
            let checks = run_invariant_suite(&cfg)?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Error::Invariant(format!("{failed} of {} checks failed", checks.len())));
            }
            Ok(())
        }
    }
}

fn out_dir(out: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    ensure_dir(&dir)?;
    Ok(dir)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

/// Estimates, scores and writes `estimates.csv`, `errors.csv` and `spectra.csv` to `dir`.
pub fn compare_run(
    cfg: &RunConfig,
    reference: &RollReference,
    frames: &[MeasurementFrame<f64>],
    dir: &Path,
) -> Result<Vec<Score>> {
    let records = estimate(cfg, frames)?;
    let series = compare(reference, cfg.truth.g_mag, frames, &records, cfg.baseline_speed)?;
    let t0 = cfg.settle_laps * lap_time(cfg)?;
    let scores = score(&series, t0, cfg.low_band)?;
    save(&dir.join("estimates.csv"), |w| write_estimates(w, &records))?;
    save(&dir.join("errors.csv"), |w| write_errors(w, &series))?;
    let labels: Vec<&str> = scores.iter().map(|s| s.label.as_str()).collect();
    let spectra: Vec<_> = scores.iter().map(|s| s.spectrum.clone()).collect();
    save(&dir.join("spectra.csv"), |w| write_spectra(w, &labels, &spectra))?;
    Ok(scores)
}

/// Simulated trials with seeds `cfg.seed + k`, run in parallel.
///
/// With more than one trial each writes to `dir/trial-k`.
pub fn run_trials(cfg: &RunConfig, trials: usize, dir: &Path) -> Result<Vec<Vec<Score>>> {
    let one = |k: usize| -> Result<Vec<Score>> {
        let cfg = RunConfig {
            seed: cfg.seed + k as u64,
            ..cfg.clone()
        };
        let dir = if trials > 1 { dir.join(format!("trial-{k}")) } else { dir.to_path_buf() };
        ensure_dir(&dir)?;
        let (truth, frames) = simulate(&cfg)?;
        compare_run(&cfg, &RollReference::from(&truth), &frames, &dir)
    };
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..trials).map(|k| s.spawn(move || one(k))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invariant("trial thread panicked".into()))))
            .collect()
    })
}

fn print_scores(scores: &[Score]) {
    println!("{:<8} {:>10} {:>10} {:>14}", "estimate", "mean deg", "std deg", "low band deg2");
    for s in scores {
        println!(
            "{:<8} {:>10.3} {:>10.3} {:>14.4e}",
            s.label,
            s.mean.to_degrees(),
            s.std.to_degrees(),
            s.low_band_energy * (180.0 / std::f64::consts::PI).powi(2)
        );
    }
}
