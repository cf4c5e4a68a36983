//! `recal example N`: parameters come from the example defaults, then the
//! config file (top-level `replications`, then the `[example]` table), then
//! flags. A top-level or `--seed` seed always wins.

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;

use recal::montecarlo::{
    reproduce_example1, reproduce_example2, reproduce_example3, Example1Params, Example2Params,
    Example3Params, RunOptions, SimulationReport,
};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// Units per cluster.
    #[arg(long = "K")]
    pub cluster_size: Option<usize>,
    /// Clusters in the population.
    #[arg(long = "M")]
    pub clusters: Option<usize>,
    /// Sampled clusters (examples 2 and 3) or units per stratum (example 1).
    #[arg(long = "n")]
    pub n: Option<usize>,
    #[arg(long)]
    pub per_stratum: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sig_eps: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub var_s: Option<f64>,
    #[arg(long)]
    pub var_eps: Option<f64>,
    #[arg(long)]
    pub var_nu: Option<f64>,
    /// `exact` standardises the generated covariates, `sampled` keeps raw draws.
    #[arg(long)]
    pub moments: Option<String>,
    #[arg(long, short = 'r')]
    pub replications: Option<usize>,
    #[arg(long)]
    pub population_seed: Option<u64>,
}

impl Overrides {
    fn entries(&self, which: u8) -> Vec<(&'static str, toml::Value)> {
        let int = |v: usize| toml::Value::Integer(v as i64);
        let n_key = if which == 1 { "n_per_stratum" } else { "n_clusters" };
        let mut out = Vec::new();
        let mut push = |key: &'static str, v: Option<toml::Value>| {
            if let Some(v) = v {
                out.push((key, v));
            }
        };
        push("cluster_size", self.cluster_size.map(int));
        push("clusters", self.clusters.map(int));
        push(n_key, self.n.map(int));
        push("per_stratum", self.per_stratum.map(int));
        push("sigma", self.sigma.map(toml::Value::Float));
        push("rho", self.rho.map(toml::Value::Float));
        push("beta", self.beta.map(toml::Value::Float));
        push("sig_eps", self.sig_eps.map(toml::Value::Float));
        push("gamma", self.gamma.map(toml::Value::Float));
        push("var_s", self.var_s.map(toml::Value::Float));
        push("var_eps", self.var_eps.map(toml::Value::Float));
        push("var_nu", self.var_nu.map(toml::Value::Float));
        push("moments", self.moments.clone().map(toml::Value::String));
        push("replications", self.replications.map(int));
        push(
            "population_seed",
            self.population_seed.map(|s| toml::Value::Integer(s as i64)),
        );
        out
    }
}

fn flag_name(key: &str) -> String {
    match key {
        "cluster_size" => "--K".into(),
        "clusters" => "--M".into(),
        "n_per_stratum" | "n_clusters" => "--n".into(),
        other => format!("--{}", other.replace('_', "-")),
    }
}

/// Layers the file table and the flags over the defaults of `P`, rejecting
/// parameters `P` does not have.
fn params<P: Default + Serialize + DeserializeOwned>(
    which: u8,
    config: &RunConfig,
    flags: &Overrides,
) -> Result<P, CliError> {
    let known = toml::Table::try_from(P::default()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut table = known.clone();
    if let Some(r) = config.replications {
        table.insert("replications".into(), toml::Value::Integer(r as i64));
    }
    for (k, v) in &config.example {
        if !known.contains_key(k) {
            return Err(CliError::Config(format!(
                "[example] key '{k}' does not apply to example {which}"
            )));
        }
        table.insert(k.clone(), v.clone());
    }
    for (k, v) in flags.entries(which) {
        if !known.contains_key(k) {
            return Err(CliError::Config(format!(
                "{} does not apply to example {which}",
                flag_name(k)
            )));
        }
        table.insert(k.to_string(), v);
    }
    if let Some(seed) = config.seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    table
        .try_into()
        .map_err(|e| CliError::Config(format!("example {which} parameters: {e}")))
}

pub fn run(which: u8, config: &RunConfig, flags: &Overrides) -> Result<SimulationReport, CliError> {
    let options = RunOptions {
        threads: config.threads,
        ..Default::default()
    };
    Ok(match which {
        1 => reproduce_example1(&params::<Example1Params>(which, config, flags)?, &options)?,
        2 => reproduce_example2(&params::<Example2Params>(which, config, flags)?, &options)?,
        3 => reproduce_example3(&params::<Example3Params>(which, config, flags)?, &options)?,
        _ => {
            return Err(CliError::Config(format!(
                "unknown example {which}; expected 1, 2 or 3"
            )))
        }
    })
}
