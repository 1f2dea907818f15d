//! Command-line experiment runner for the tuber-sampling cell simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use tubersim::config::{ConfigError, ExperimentConfig};
use tubersim::harness::calibrate::{calibrate, CalibrationTargets, SearchConfig};
use tubersim::harness::{replay, run, HarnessError, RunOptions};

const EXIT_CONFIG: u8 = 1;
const EXIT_CALIBRATION_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "tubersim",
    about = "Deterministic simulator of a dual-arm robotic tuber tissue-sampling cell",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML); omit for the calibrated defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the configured batch size.
    #[arg(long)]
    batch_size: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(replicates) = self.replicates {
            cfg.replicates = replicates;
        }
        if let Some(batch) = self.batch_size {
            cfg.batch_size = batch;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute Monte-Carlo batches and write records plus a summary.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for records.jsonl and summary.json.
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
        /// Also record every detector frame (requires replicates = 1).
        #[arg(long)]
        detection_log: bool,
        /// Also record a time-stamped actuator command trace.
        #[arg(long)]
        trace: bool,
    },
    /// Search outcome-model constants against the measured statistics.
    Calibrate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Radial-offset samples drawn from the perception pipeline.
        #[arg(long)]
        samples: Option<usize>,
        /// Monte-Carlo draws in the verification pass.
        #[arg(long)]
        verify_draws: Option<usize>,
        /// Write the calibrated outcome-model block (TOML) here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-run the pipeline on a recorded detection log.
    Replay {
        #[command(flatten)]
        config: ConfigArgs,
        /// Detection log to replay.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Check a configuration file and exit.
    ValidateConfig {
        /// Configuration file to validate.
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_for(err: &anyhow::Error) -> ExitCode {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Some(HarnessError::Config(_)) = cause.downcast_ref::<HarnessError>() {
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_for(&err)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            output_dir,
            detection_log,
            trace,
        } => {
            let cfg = config.load()?;
            let options = RunOptions {
                record_detections: detection_log,
                trace_commands: trace,
            };
            let artifacts = run(&cfg, &options).context("run failed")?;
            let records_path = artifacts.write_to(&output_dir)?;
            print!("{}", artifacts.report.render_text());
            println!("records: {}", records_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate {
            config,
            samples,
            verify_draws,
            output,
        } => {
            let cfg = config.load()?;
            let mut search = SearchConfig::default();
            if let Some(n) = samples {
                search.r_samples = n;
            }
            if let Some(n) = verify_draws {
                search.verify_draws = n;
            }
            let report = calibrate(&cfg, &CalibrationTargets::default(), &search);
            print!("{}", report.render_text());
            if let Some(path) = output {
                let text = toml::to_string_pretty(&report.params).context("constants serialize")?;
                std::fs::write(&path, text)
                    .with_context(|| format!("cannot write {}", path.display()))?;
                println!("constants written to {}", path.display());
            }
            if report.diverged {
                return Ok(ExitCode::from(EXIT_CALIBRATION_DIVERGED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay {
            config,
            log,
            output_dir,
        } => {
            let cfg = config.load()?;
            let artifacts = replay(&cfg, &log).context("replay failed")?;
            let records_path = artifacts.write_to(&output_dir)?;
            print!("{}", artifacts.report.render_text());
            println!("records: {}", records_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig { config } => {
            ExperimentConfig::load(&config)?;
            println!("config ok: {}", config.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
