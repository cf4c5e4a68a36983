//! Run configuration: an optional TOML file merged with command-line flags,
//! flags taking precedence.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use recal::population::Schema;

use crate::CliError;

pub const CAP_ENV: &str = "RECAL_ENUM_CAP";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Keys accepted in a config file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub population: Option<PathBuf>,
    pub generator: Option<String>,
    pub y_column: Option<String>,
    pub x_columns: Option<Vec<String>>,
    pub stratum_column: Option<String>,
    pub cluster_column: Option<String>,
    pub q_column: Option<String>,
    pub design: Option<String>,
    pub estimators: Option<Vec<String>>,
    pub ratios: Option<Vec<String>>,
    pub known_t_x: Option<Vec<f64>>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub threads: Option<usize>,
    pub enumeration_cap: Option<u64>,
    pub output: Option<PathBuf>,
    pub sample: Option<PathBuf>,
    pub emit_weights: Option<bool>,
    pub example: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

/// Flags shared by every command.
#[derive(Clone, Debug, Default, Args)]
pub struct OutputArgs {
    /// TOML config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Population, design and estimator flags.
#[derive(Clone, Debug, Default, Args)]
pub struct InputArgs {
    /// Population CSV with columns y, x1..xp and optional stratum/cluster.
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Synthetic population, e.g. `example2(clusters=500, cluster_size=5)`.
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub y_column: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub x_columns: Option<Vec<String>>,
    #[arg(long)]
    pub stratum_column: Option<String>,
    #[arg(long)]
    pub cluster_column: Option<String>,
    /// Design, e.g. `srswor(n=50)` or `stratified(n=[50, 50])`.
    #[arg(long)]
    pub design: Option<String>,
    /// Estimator, e.g. `greg` or `optimal(c=0.8)`; repeat for several.
    #[arg(long = "estimator", short = 'e')]
    pub estimators: Vec<String>,
    /// Known covariate totals, comma separated; population totals otherwise.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub known_t_x: Option<Vec<f64>>,
}

/// The merged configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub input: Input,
    pub schema: Schema,
    pub q_column: Option<String>,
    pub design: String,
    pub estimators: Vec<String>,
    pub ratios: Vec<String>,
    pub known_t_x: Option<Vec<f64>>,
    pub format: Format,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub threads: Option<usize>,
    pub enumeration_cap: Option<u64>,
    pub output: Option<PathBuf>,
    pub sample: Option<PathBuf>,
    pub emit_weights: bool,
    pub example: toml::Table,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Csv(PathBuf),
    Generator(String),
}

pub fn file_config(out: &OutputArgs) -> Result<FileConfig, CliError> {
    out.config
        .as_deref()
        .map_or(Ok(FileConfig::default()), FileConfig::load)
}

impl RunConfig {
    /// Merges file and flags. `input` is `None` for commands that build
    /// their own population.
    pub fn merge(file: FileConfig, out: &OutputArgs, input: Option<&InputArgs>) -> Result<Self, CliError> {
        let empty = InputArgs::default();
        let flags = input.unwrap_or(&empty);
        let source = match (&flags.population, &flags.generator) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "give either --population or --generator, not both".into(),
                ))
            }
            (Some(p), None) => Some(Input::Csv(p.clone())),
            (None, Some(g)) => Some(Input::Generator(g.clone())),
            (None, None) => match (file.population, file.generator) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Config(
                        "config sets both population and generator; keep exactly one".into(),
                    ))
                }
                (Some(p), None) => Some(Input::Csv(p)),
                (None, Some(g)) => Some(Input::Generator(g)),
                (None, None) => None,
            },
        };
        let input_required = input.is_some();
        let input = match source {
            Some(s) => s,
            None if input_required => {
                return Err(CliError::Config(
                    "no population: set --population or --generator".into(),
                ))
            }
            None => Input::Generator(String::new()),
        };
        let design = match flags.design.clone().or(file.design) {
            Some(d) => d,
            None if input_required => return Err(CliError::Config("no design: set --design".into())),
            None => String::new(),
        };
        let schema = Schema {
            y: flags
                .y_column
                .clone()
                .or(file.y_column)
                .unwrap_or_else(|| "y".into()),
            x: flags.x_columns.clone().or(file.x_columns).unwrap_or_default(),
            stratum: flags.stratum_column.clone().or(file.stratum_column),
            cluster: flags.cluster_column.clone().or(file.cluster_column),
        };
        let estimators = if flags.estimators.is_empty() {
            file.estimators.unwrap_or_default()
        } else {
            flags.estimators.clone()
        };
        Ok(RunConfig {
            input,
            schema,
            q_column: file.q_column,
            design,
            estimators,
            ratios: file.ratios.unwrap_or_default(),
            known_t_x: flags.known_t_x.clone().or(file.known_t_x),
            format: out.format.or(file.format).unwrap_or_default(),
            seed: out.seed.or(file.seed),
            replications: file.replications,
            threads: out.threads.or(file.threads),
            enumeration_cap: file.enumeration_cap,
            output: out.output.clone().or(file.output),
            sample: file.sample,
            emit_weights: file.emit_weights.unwrap_or(false),
            example: file.example.unwrap_or_default(),
        })
    }

    /// Cap precedence: flag, then the environment, then the file.
    pub fn cap(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(c) = flag {
            return Ok(c);
        }
        if let Ok(v) = std::env::var(CAP_ENV) {
            return v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{CAP_ENV}={v} is not a sample count")));
        }
        Ok(self
            .enumeration_cap
            .unwrap_or(recal::design::DEFAULT_ENUMERATION_CAP))
    }
}
