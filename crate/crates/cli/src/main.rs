//! `recal`: estimate totals from one sample, run Monte Carlo or exhaustive
//! experiments, and reproduce the packaged examples.
//!
//! Exit codes: 0 ok, 1 output failure, 2 configuration, 3 estimation,
//! 4 enumeration cap.

mod commands;
mod config;
mod examples;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{file_config, InputArgs, OutputArgs, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Estimation(String),
    Cap(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Cap(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Estimation(m) | CliError::Cap(m) | CliError::Io(m) => m,
        }
    }
}

impl From<recal::Error> for CliError {
    fn from(e: recal::Error) -> Self {
        use recal::Error as E;
        let text = e.to_string();
        match e {
            E::EnumerationCap { .. } => CliError::Cap(text),
            E::Io { .. }
            | E::Schema(_)
            | E::Parse { .. }
            | E::EmptyPopulation
            | E::Argument(_)
            | E::Configuration(_)
            | E::Grammar { .. } => CliError::Config(text),
            E::Unsupported { .. }
            | E::Support(_)
            | E::RankDeficient { .. }
            | E::ReplicationFailures { .. } => CliError::Estimation(text),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "recal",
    version,
    about = "Design-based totals with auxiliary information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate totals from one drawn or supplied sample.
    Estimate {
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        input: InputArgs,
        /// File of sampled unit ids (0-based row numbers), one per line.
        #[arg(long)]
        sample: Option<PathBuf>,
        /// Include per-unit weights and their self-checks.
        #[arg(long)]
        emit_weights: bool,
        /// CSV column holding the GREG q factors.
        #[arg(long)]
        q_column: Option<String>,
    },
    /// Monte Carlo experiment over repeated samples.
    Simulate {
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, short = 'r')]
        replications: Option<usize>,
        /// Variance ratio to report, e.g. `optimal/greg`; repeatable.
        #[arg(long = "ratio")]
        ratios: Vec<String>,
    },
    /// Exact moments over every sample of the design.
    Enumerate {
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        input: InputArgs,
        /// Largest number of samples to visit (also RECAL_ENUM_CAP).
        #[arg(long)]
        cap: Option<u64>,
        #[arg(long = "ratio")]
        ratios: Vec<String>,
    },
    /// Reproduce one of the packaged examples.
    Example {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        which: u8,
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        overrides: examples::Overrides,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate {
            out,
            input,
            sample,
            emit_weights,
            q_column,
        } => {
            let mut config = RunConfig::merge(file_config(&out)?, &out, Some(&input))?;
            config.sample = sample.or(config.sample);
            config.emit_weights |= emit_weights;
            config.q_column = q_column.or(config.q_column);
            let report = commands::estimate(&config)?;
            for check in &report.checks {
                eprintln!("{}", check.line());
            }
            output::emit(&output::render(&report, config.format)?, config.output.as_deref())?;
            if let Some(failed) = report.checks.iter().find(|c| !c.pass) {
                return Err(CliError::Estimation(format!("weight {}", failed.line())));
            }
            Ok(())
        }
        Command::Simulate {
            out,
            input,
            replications,
            ratios,
        } => {
            let mut config = RunConfig::merge(file_config(&out)?, &out, Some(&input))?;
            config.replications = replications.or(config.replications);
            if !ratios.is_empty() {
                config.ratios = ratios;
            }
            let report = commands::simulate(&config)?;
            output::emit(&output::render(&report, config.format)?, config.output.as_deref())
        }
        Command::Enumerate {
            out,
            input,
            cap,
            ratios,
        } => {
            let mut config = RunConfig::merge(file_config(&out)?, &out, Some(&input))?;
            if !ratios.is_empty() {
                config.ratios = ratios;
            }
            let cap = config.cap(cap)?;
            let report = commands::enumerate(&config, cap)?;
            for line in commands::unbiasedness_lines(&report) {
                eprintln!("{line}");
            }
            output::emit(&output::render(&report, config.format)?, config.output.as_deref())
        }
        Command::Example {
            which,
            out,
            overrides,
        } => {
            let config = RunConfig::merge(file_config(&out)?, &out, None)?;
            let report = examples::run(which, &config, &overrides)?;
            output::emit(&output::render(&report, config.format)?, config.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
