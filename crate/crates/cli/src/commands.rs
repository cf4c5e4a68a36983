use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use recal::covariance::{cov_hat, recommended_c};
use recal::design::{Design, DesignSpec, Sample};
use recal::estimators::{
    beta_o_hat, beta_o_true, fixed_beta_estimate, greg_beta_hat, greg_estimate, greg_weights, ht_totals,
    ht_weights, optimal_estimate, optimal_weights, WeightSet,
};
use recal::montecarlo::{
    self, EstimatorSpec, ExperimentSpec, Mode, NamedEstimator, PopulationSource, RatioSpec, RunOptions,
    SimulationReport, SCHEMA_VERSION,
};
use recal::population::{load_population, Population, SuperpopSpec};

use crate::config::{Input, RunConfig};
use crate::CliError;

/// Agreement required of the weight self-checks.
pub const SELF_CHECK_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub command: String,
    pub design: String,
    pub seed: Option<u64>,
    pub population_size: usize,
    pub known_t_x: Vec<f64>,
    pub sample: Vec<usize>,
    pub estimates: Vec<EstimateRow>,
    pub weights: Vec<WeightRows>,
    pub checks: Vec<SelfCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub name: String,
    pub estimate: f64,
    pub beta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRows {
    pub name: String,
    pub units: Vec<usize>,
    pub weights: Vec<f64>,
}

/// `calibration`: Σ w x against the known totals. `duality`: Σ w y against
/// the coefficient form of the same estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub name: String,
    pub kind: String,
    pub relative_residual: f64,
    pub pass: bool,
}

impl SelfCheck {
    fn new(name: &str, kind: &str, relative_residual: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: kind.to_string(),
            relative_residual,
            pass: relative_residual <= SELF_CHECK_TOLERANCE,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "self-check {} {}: relative residual {:.3e} {}",
            self.name,
            self.kind,
            self.relative_residual,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

pub fn load(config: &RunConfig) -> Result<Population, CliError> {
    Ok(match &config.input {
        Input::Csv(path) => load_population(path, &config.schema)?,
        Input::Generator(text) => SuperpopSpec::parse(text)?.generate()?,
    })
}

fn source(config: &RunConfig) -> Result<PopulationSource, CliError> {
    Ok(match &config.input {
        Input::Csv(path) => PopulationSource::Csv {
            path: path.clone(),
            schema: config.schema.clone(),
        },
        Input::Generator(text) => PopulationSource::Generator {
            spec: SuperpopSpec::parse(text)?,
        },
    })
}

fn estimators(
    config: &RunConfig,
    design: &DesignSpec,
    default: &[&str],
) -> Result<Vec<NamedEstimator>, CliError> {
    let texts: Vec<String> = if config.estimators.is_empty() {
        default.iter().map(|s| s.to_string()).collect()
    } else {
        config.estimators.clone()
    };
    let parsed = texts
        .iter()
        .map(|t| NamedEstimator::parse(t, design))
        .collect::<recal::Result<Vec<_>>>()?;
    for (i, e) in parsed.iter().enumerate() {
        if parsed[..i].iter().any(|o| o.name == e.name) {
            return Err(CliError::Config(format!(
                "estimator name '{}' is used twice; add name=... to tell them apart",
                e.name
            )));
        }
    }
    Ok(parsed)
}

fn ratios(config: &RunConfig) -> Result<Vec<RatioSpec>, CliError> {
    config
        .ratios
        .iter()
        .map(|r| match r.split_once('/') {
            Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => Ok(RatioSpec {
                numerator: a.trim().to_string(),
                denominator: b.trim().to_string(),
                target: None,
            }),
            _ => Err(CliError::Config(format!(
                "ratio '{r}' should look like numerator/denominator"
            ))),
        })
        .collect()
}

/// One unit id per line; blank lines and `#` comments are skipped.
pub fn read_sample(path: &Path) -> Result<Sample, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read sample file {}: {e}", path.display())))?;
    let mut units = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id = line.parse::<usize>().map_err(|_| {
            CliError::Config(format!(
                "sample file {} line {}: '{line}' is not a unit id",
                path.display(),
                line_no + 1
            ))
        })?;
        units.push(id);
    }
    Ok(Sample::new(units))
}

fn q_values(config: &RunConfig, pop: &Population) -> Result<Option<Vec<f64>>, CliError> {
    let Some(column) = &config.q_column else {
        return Ok(None);
    };
    let Input::Csv(path) = &config.input else {
        return Err(CliError::Config("q_column needs a CSV population".into()));
    };
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Config(e.to_string()))?
        .clone();
    let idx = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| CliError::Config(format!("q column '{column}' not found in {}", path.display())))?;
    let mut q = Vec::with_capacity(pop.len());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(e.to_string()))?;
        let field = record.get(idx).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| CliError::Config(format!("row {}: q value '{field}' is not a number", row + 1)))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(CliError::Config(format!(
                "row {}: q must be positive, got {v}",
                row + 1
            )));
        }
        q.push(v);
    }
    Ok(Some(q))
}

fn relative(residual: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        residual.abs() / scale
    } else {
        residual.abs()
    }
}

fn calibration_check(name: &str, w: &WeightSet, pop: &Population) -> SelfCheck {
    let worst = w
        .calibration_residual(pop)
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let scale: f64 = w
                .units
                .iter()
                .zip(&w.weights)
                .map(|(&u, wt)| (wt * pop.unit(u).x[k]).abs())
                .sum::<f64>()
                + w.calibration_target[k].abs();
            relative(*r, scale)
        })
        .fold(0.0, f64::max);
    SelfCheck::new(name, "calibration", worst)
}

fn duality_check(name: &str, w: &WeightSet, pop: &Population, estimate: f64) -> SelfCheck {
    let scale: f64 = w
        .units
        .iter()
        .zip(&w.weights)
        .map(|(&u, wt)| (wt * pop.unit(u).y).abs())
        .sum();
    SelfCheck::new(
        name,
        "duality",
        relative(w.estimate(&pop.y_values()) - estimate, scale),
    )
}

fn coordinate(values: &[f64], k: usize) -> Result<f64, CliError> {
    values
        .get(k)
        .copied()
        .ok_or_else(|| CliError::Config(format!("coordinate {k} is out of range for p={}", values.len())))
}

pub fn estimate(config: &RunConfig) -> Result<EstimateReport, CliError> {
    let pop = load(config)?;
    let spec = DesignSpec::parse(&config.design)?;
    if matches!(spec, DesignSpec::Nested { .. }) {
        return Err(CliError::Config(
            "estimate works with single-stage samples; use simulate for nested designs".into(),
        ));
    }
    let design = Design::new(spec.clone(), &pop)?;
    let list = estimators(config, &spec, &["ht", "greg", "optimal"])?;
    let q = q_values(config, &pop)?;
    if let Some(q) = &q {
        if q.len() != pop.len() {
            return Err(CliError::Config(format!(
                "q column has {} rows for N={}",
                q.len(),
                pop.len()
            )));
        }
    }
    let t = config.known_t_x.clone().unwrap_or_else(|| pop.t_x().to_vec());
    if t.len() != pop.dim() {
        return Err(CliError::Config(format!(
            "known_t_x has {} entries but the population has p={} covariates",
            t.len(),
            pop.dim()
        )));
    }
    let (sample, seed) = match &config.sample {
        Some(path) => {
            let s = read_sample(path)?;
            design.validate_sample(&s)?;
            (s, None)
        }
        None => {
            let seed = config.seed.unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (design.draw(&mut rng)?, Some(seed))
        }
    };
    let default_c = recommended_c(&design);
    let q = q.as_deref();
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut checks = Vec::new();
    for e in &list {
        let name = e.name.as_str();
        let (value, beta) = match &e.estimator {
            EstimatorSpec::Ht => {
                if config.emit_weights {
                    let w = ht_weights(&sample, &design, &pop)?;
                    weights.push(WeightRows {
                        name: name.into(),
                        units: w.units,
                        weights: w.weights,
                    });
                }
                (ht_totals(&sample, &design, &pop)?.t_y_hat, None)
            }
            EstimatorSpec::Greg => {
                let value = greg_estimate(&sample, &design, &pop, q, &t)?;
                let beta = greg_beta_hat(&sample, &design, &pop, q)?.beta;
                if config.emit_weights {
                    let w = greg_weights(&sample, &design, &pop, q, &t)?;
                    checks.push(calibration_check(name, &w, &pop));
                    checks.push(duality_check(name, &w, &pop, value));
                    weights.push(WeightRows {
                        name: name.into(),
                        units: w.units,
                        weights: w.weights,
                    });
                }
                (value, Some(beta))
            }
            EstimatorSpec::Optimal { c } => {
                let c = c.unwrap_or(default_c);
                let value = optimal_estimate(&sample, &design, &pop, c, &t)?;
                let beta = beta_o_hat(&sample, &design, &pop, c, &t)?.beta;
                if config.emit_weights {
                    let w = optimal_weights(&sample, &design, &pop, c, &t)?;
                    checks.push(duality_check(name, &w, &pop, value));
                    weights.push(WeightRows {
                        name: name.into(),
                        units: w.units,
                        weights: w.weights,
                    });
                }
                (value, Some(beta))
            }
            EstimatorSpec::OptimalExact => {
                let beta = beta_o_true(&design, &pop)?.beta;
                (
                    fixed_beta_estimate(&sample, &design, &pop, &beta, &t)?,
                    Some(beta),
                )
            }
            EstimatorSpec::FixedBeta { beta } => (
                fixed_beta_estimate(&sample, &design, &pop, beta, &t)?,
                Some(beta.clone()),
            ),
            EstimatorSpec::GregBeta { coordinate: k } => (
                coordinate(&greg_beta_hat(&sample, &design, &pop, q)?.beta, *k)?,
                None,
            ),
            EstimatorSpec::OptimalBeta { c, coordinate: k } => {
                let b = beta_o_hat(&sample, &design, &pop, c.unwrap_or(default_c), &t)?.beta;
                (coordinate(&b, *k)?, None)
            }
            EstimatorSpec::CovHatXx { c, row, col } => {
                let s = cov_hat(&sample, &design, &pop, *c, &t)?.sigma_xx_hat;
                if *row >= s.nrows() || *col >= s.ncols() {
                    return Err(CliError::Config(format!("entry ({row}, {col}) is out of range")));
                }
                (s[(*row, *col)], None)
            }
            EstimatorSpec::CovHatXy { c, coordinate: k } => {
                let s = cov_hat(&sample, &design, &pop, *c, &t)?.sigma_xy_hat;
                (coordinate(s.as_slice(), *k)?, None)
            }
            _ => {
                return Err(CliError::Config(format!(
                    "estimator '{name}' needs repeated or nested samples; use simulate"
                )))
            }
        };
        rows.push(EstimateRow {
            name: name.into(),
            estimate: value,
            beta,
        });
    }
    Ok(EstimateReport {
        schema_version: SCHEMA_VERSION,
        command: "estimate".into(),
        design: spec.to_string(),
        seed,
        population_size: pop.len(),
        known_t_x: t,
        sample: sample.units().to_vec(),
        estimates: rows,
        weights,
        checks,
    })
}

fn experiment(config: &RunConfig, mode: Mode) -> Result<ExperimentSpec, CliError> {
    if config.q_column.is_some() {
        return Err(CliError::Config(
            "q_column applies to the estimate command only".into(),
        ));
    }
    let design = DesignSpec::parse(&config.design)?;
    let default: &[&str] = if matches!(design, DesignSpec::Nested { .. }) {
        &["delta_t_y1", "delta"]
    } else {
        &["ht", "greg", "optimal"]
    };
    let estimators = estimators(config, &design, default)?;
    Ok(ExperimentSpec {
        population: source(config)?,
        design,
        estimators,
        ratios: ratios(config)?,
        covariances: Vec::new(),
        replications: config.replications.unwrap_or(0),
        seed: config.seed.unwrap_or(0),
        mode,
        known_t_x: config.known_t_x.clone(),
        targets: BTreeMap::new(),
    })
}

pub fn simulate(config: &RunConfig) -> Result<SimulationReport, CliError> {
    if config.seed.is_none() {
        return Err(CliError::Config(
            "simulate needs a seed (--seed or seed = ...)".into(),
        ));
    }
    if config.replications.is_none() {
        return Err(CliError::Config("simulate needs --replications".into()));
    }
    let spec = experiment(config, Mode::Montecarlo)?;
    let options = RunOptions {
        threads: config.threads,
        ..Default::default()
    };
    Ok(montecarlo::run_experiment(&spec, &options)?)
}

pub fn enumerate(config: &RunConfig, cap: u64) -> Result<SimulationReport, CliError> {
    let spec = experiment(config, Mode::Enumerate)?;
    let options = RunOptions {
        threads: config.threads,
        enumeration_cap: cap,
    };
    Ok(montecarlo::run_experiment(&spec, &options)?)
}

pub fn unbiasedness_lines(report: &SimulationReport) -> Vec<String> {
    report
        .series
        .iter()
        .filter_map(|s| {
            s.unbiased.map(|ok| {
                format!(
                    "{}: exact mean {} target {} {}",
                    s.name,
                    s.mean,
                    s.target.map_or("-".to_string(), |t| t.to_string()),
                    if ok { "unbiased PASS" } else { "unbiased FAIL" }
                )
            })
        })
        .collect()
}
