//! Command-line front end: configuration loading, run orchestration,
//! resume-from-checkpoint, and the analysis/export subcommands.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evoretina::config::RunConfig;
use evoretina::runner::{
    execute_analyze, execute_export_stimuli, execute_resume, execute_run, RunnerError,
};

#[derive(Parser)]
#[command(name = "evoretina", version, about = "Evolves retina-like spiking networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all evolution trials of a config into a fresh output directory.
    Run {
        /// Config file (TOML); unset fields take the documented defaults.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the evaluation worker count (0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue an interrupted run directory from its checkpoints.
    Resume {
        /// Run directory holding resolved.toml.
        #[arg(long)]
        out: PathBuf,
        /// Override the evaluation worker count (0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Derive tuning curves, population statistics, and the survival test
    /// from a completed run directory.
    Analyze {
        /// Run directory holding resolved.toml.
        #[arg(long)]
        out: PathBuf,
        /// Also dump per-step membrane traces of each final elite under a
        /// center-photoreceptor probe.
        #[arg(long)]
        trace: bool,
    },
    /// Write the frozen stimulus set of trial 0 as CSV.
    ExportStimuli {
        /// Config file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Destination file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a config file, printing its resolved hash.
    ValidateConfig {
        /// Config file (TOML).
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<&PathBuf>,
) -> Result<RunConfig, RunnerError> {
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = seed {
        config.ga.rng_seed = seed;
    }
    if let Some(workers) = workers {
        config.run.workers = workers;
    }
    if let Some(out) = out {
        config.run.out_dir = out.display().to_string();
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(command: Command) -> Result<(), RunnerError> {
    match command {
        Command::Run { config, seed, workers, out } => {
            let config = load_config(&config, seed, workers, out.as_ref())?;
            let report = execute_run(&config)?;
            println!(
                "run complete: {} trial(s) in {} (config {})",
                report.trials_completed,
                report.out_dir.display(),
                report.config_hash
            );
            let mean = report.survival_gains.iter().sum::<f64>()
                / report.survival_gains.len() as f64;
            println!("mean survival gain {mean:.6}");
            if let Some(test) = report.test {
                println!(
                    "one-sided t-test vs zero gain: t = {:.4}, p = {:.6}",
                    test.t_statistic, test.p_value
                );
            }
        }
        Command::Resume { out, workers } => {
            let report = execute_resume(&out, workers)?;
            if report.was_noop() {
                println!("nothing to do: all {} trial(s) already complete", report.already_done.len());
            } else {
                if !report.resumed.is_empty() {
                    println!("resumed trial(s) {:?} from checkpoint", report.resumed);
                }
                if !report.restarted.is_empty() {
                    println!("restarted trial(s) {:?} (no usable checkpoint)", report.restarted);
                }
                if !report.already_done.is_empty() {
                    println!("left finished trial(s) {:?} untouched", report.already_done);
                }
            }
            if let Some(test) = report.test {
                println!(
                    "one-sided t-test vs zero gain: t = {:.4}, p = {:.6}",
                    test.t_statistic, test.p_value
                );
            }
        }
        Command::Analyze { out, trace } => {
            let report = execute_analyze(&out, trace)?;
            println!(
                "analyzed {} trial(s), {} elite(s) each, into {}",
                report.trials,
                report.elites_per_trial,
                report.analysis_dir.display()
            );
        }
        Command::ExportStimuli { config, out } => {
            let config = RunConfig::from_path(&config)?;
            execute_export_stimuli(&config, &out)?;
            println!("wrote stimulus set to {}", out.display());
        }
        Command::ValidateConfig { config } => {
            let config = RunConfig::from_path(&config)?;
            println!("config ok ({})", config.hash());
        }
    }
    Ok(())
}

/// 1 when the user's inputs were wrong before any work started, 2 when the
/// failure happened while operating.
fn exit_code(err: &RunnerError) -> u8 {
    match err {
        RunnerError::Config(_) | RunnerError::AlreadyExists(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version arrive as clap "errors" but are successes.
            let ok = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
