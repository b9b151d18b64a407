//! Command-line front end for experiment grids.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use replay_core::data::Scenario;
use replay_core::dataset::{save_csv, RawDataset};
use replay_core::error::Error;
use replay_core::runner::{emit_report, format_report, run_experiment, ExperimentConfig};
use replay_core::synth::{generate_stream, SynthConfig};

#[derive(Parser)]
#[command(name = "clreplay", version, about = "Continual-learning replay experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of the grid in a config file.
    Run {
        config: PathBuf,
        /// Override the results directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Override the number of parallel runs (0 = all cores).
        #[arg(short, long)]
        workers: Option<usize>,
    },
    /// Aggregate summary.csv into report.csv and print the table.
    Report { results_dir: PathBuf },
    /// Write a synthetic stream described by a TOML file to CSV.
    Synth {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

// anything that stops a config from loading is reported as a config error
fn load_config(path: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(path.display().to_string(), other.to_string()),
    })
}

fn load_synth(path: &Path) -> Result<SynthConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::config("synth", e.message().to_string()))?;
    SynthConfig::with_overrides(&table, Scenario::DomainIl)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { config, output, workers } => load_config(&config).and_then(|mut cfg| {
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let out = run_experiment(&cfg)?;
            println!(
                "{} runs completed, {} failed; results in {}",
                out.completed.len(),
                out.failed.len(),
                out.output_dir.display()
            );
            match out.failed.into_iter().next() {
                Some((run, e)) => Err(Error::invalid(format!("run {run} failed: {e}"))),
                None => Ok(()),
            }
        }),
        Command::Report { results_dir } => emit_report(&results_dir).map(|rows| print!("{}", format_report(&rows))),
        Command::Synth { spec, output } => load_synth(&spec).and_then(|cfg| {
            let stream = generate_stream::<f64>(&cfg.plan()?)?;
            let raw = RawDataset::from_stream(&stream);
            save_csv(&raw, &output)?;
            println!("wrote {} rows x {} features to {}", raw.len(), raw.feature_dim(), output.display());
            Ok(())
        }),
        Command::Validate { config } => load_config(&config).map(|cfg| {
            println!("ok: {} runs", cfg.runs().len());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
