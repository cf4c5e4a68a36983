//! Experiment engine: exact moments by enumeration at small N and seeded
//! Monte Carlo at realistic scale.
//!
//! Replication `r` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream
//! `r`, and values are stored by replication index, so a report depends on
//! the seed and the spec only, never on the worker count. Summaries are
//! computed from the stored table; splitting a run into blocks and merging
//! the tables reproduces the single run exactly.

mod examples;
mod summary;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{cov_exact, cov_hat, recommended_c};
use crate::design::grammar::{grammar_error, parse_call};
use crate::design::{Design, DesignSpec, NestedSample, Sample, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::estimators::{
    beta_o_hat, beta_o_true, delta_estimate, fixed_beta_estimate, greg_beta_hat, greg_estimate, ht_totals,
    optimal_estimate, two_sample_estimate, DeltaCovariances, TwoSampleCovariance,
};
use crate::population::{load_population, Population, Schema, SuperpopSpec, Unit};

pub use examples::{
    reproduce_example1, reproduce_example2, reproduce_example3, Example1Params, Example2Params,
    Example3Params,
};
pub use summary::{CovarianceSummary, Distribution, RatioSummary, SeriesSummary};

use summary::{summarize_covariance, summarize_ratio, summarize_series, Weighting};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest share of failed replications an experiment tolerates.
pub const FAILURE_BUDGET: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PopulationSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Schema,
    },
    Generator {
        spec: SuperpopSpec,
    },
    Inline {
        units: Vec<Unit>,
    },
}

impl PopulationSource {
    pub fn load(&self) -> Result<Population> {
        match self {
            PopulationSource::Csv { path, schema } => load_population(path, schema),
            PopulationSource::Generator { spec } => spec.generate(),
            PopulationSource::Inline { units } => Population::new(units.clone()),
        }
    }
}

/// Where a nested-sample estimator takes `Var(δ̂_X)` and
/// `Cov(δ̂_X, t̂_Y¹)` from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum DeltaSource {
    /// Exact design covariances of the realised population.
    Exact,
    /// Superpopulation formulas for exchangeable clusters.
    Analytic {
        rho: f64,
        sigma: f64,
        beta: f64,
        #[serde(default)]
        sig_eps: f64,
    },
}

/// A replicated statistic. Those with a natural target (`t_Y`, an exact
/// covariance) get bias, MSE and, in enumerate mode, an unbiasedness check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// `t̂_Y`.
    Ht,
    /// GREG with q ≡ 1.
    Greg,
    /// `T(β̂₀)` with plug-in covariances; `c` defaults to the design's
    /// recommended constant.
    Optimal {
        #[serde(default)]
        c: Option<f64>,
    },
    /// `T(β₀)` with the exact design-optimal coefficient.
    OptimalExact,
    /// `T(β)` for a fixed β.
    FixedBeta { beta: Vec<f64> },
    /// One coordinate of the GREG `β̂`.
    GregBeta {
        #[serde(default)]
        coordinate: usize,
    },
    /// One coordinate of the plug-in `β̂₀`.
    OptimalBeta {
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        coordinate: usize,
    },
    /// `t̂_Y¹ − β₀₂ᵀ(t̂_X¹ − t̂_X²)` with an independent second sample whose
    /// covariates centre the plug-in covariance estimates.
    TwoSample {
        second: DesignSpec,
        #[serde(default)]
        c: Option<f64>,
    },
    /// `t̂_Y¹ − β₀₃ᵀ δ̂_X` (nested designs).
    Delta { covariances: DeltaSource },
    /// `t̂_Y¹` alone (nested designs).
    DeltaTy1,
    /// One coordinate of `δ̂_X` (nested designs).
    DeltaX {
        #[serde(default)]
        coordinate: usize,
    },
    /// Entry (row, col) of the pair-sum estimate of `Var(t̂_X)`.
    CovHatXx {
        c: f64,
        #[serde(default)]
        row: usize,
        #[serde(default)]
        col: usize,
    },
    /// Entry of the pair-sum estimate of `Cov(t̂_X, t̂_Y)`.
    CovHatXy {
        c: f64,
        #[serde(default)]
        coordinate: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimator {
    pub name: String,
    #[serde(flatten)]
    pub estimator: EstimatorSpec,
}

impl NamedEstimator {
    pub fn new(name: impl Into<String>, estimator: EstimatorSpec) -> Self {
        Self {
            name: name.into(),
            estimator,
        }
    }
}

impl NamedEstimator {
    /// Parses `ht`, `greg`, `optimal(c=0.8)`, `optimal_exact`,
    /// `fixed_beta(beta=[1, 0.5])`, `greg_beta(coordinate=0)`,
    /// `optimal_beta(c=0.8)`, `two_sample(n=20)`, `delta(from=exact)`,
    /// `delta(from=analytic, rho=0.2, sigma=1, beta=1)`, `delta_t_y1`,
    /// `delta_x`, `cov_hat_xx(c=0.3, row=0, col=0)` or
    /// `cov_hat_xy(c=0.3)`. Every form accepts `name=...`, which defaults
    /// to the estimator keyword. `two_sample` draws its second sample
    /// from `design` with the sample size replaced by `n`.
    pub fn parse(input: &str, design: &DesignSpec) -> Result<Self> {
        let call = parse_call(input)?;
        let keys = |extra: &[&str]| -> Result<()> {
            let mut allowed = vec!["name"];
            allowed.extend_from_slice(extra);
            call.expect_keys(&allowed)
        };
        let coordinate = || -> Result<usize> { Ok(call.count("coordinate")?.unwrap_or(0)) };
        let estimator = match call.name.as_str() {
            "ht" => {
                keys(&[])?;
                EstimatorSpec::Ht
            }
            "greg" => {
                keys(&[])?;
                EstimatorSpec::Greg
            }
            "optimal" => {
                keys(&["c"])?;
                EstimatorSpec::Optimal { c: call.number("c")? }
            }
            "optimal_exact" => {
                keys(&[])?;
                EstimatorSpec::OptimalExact
            }
            "fixed_beta" => {
                keys(&["beta"])?;
                let beta = call
                    .numbers("beta")?
                    .ok_or_else(|| grammar_error("fixed_beta", "missing required argument 'beta'"))?;
                EstimatorSpec::FixedBeta { beta }
            }
            "greg_beta" => {
                keys(&["coordinate"])?;
                EstimatorSpec::GregBeta {
                    coordinate: coordinate()?,
                }
            }
            "optimal_beta" => {
                keys(&["c", "coordinate"])?;
                EstimatorSpec::OptimalBeta {
                    c: call.number("c")?,
                    coordinate: coordinate()?,
                }
            }
            "two_sample" => {
                keys(&["n", "c"])?;
                let n = call
                    .numbers("n")?
                    .ok_or_else(|| grammar_error("two_sample", "missing required argument 'n'"))?;
                EstimatorSpec::TwoSample {
                    second: resized(design, &n)?,
                    c: call.number("c")?,
                }
            }
            "delta" => {
                keys(&["from", "rho", "sigma", "beta", "sig_eps"])?;
                let covariances = match call.word("from")? {
                    None | Some("exact") => DeltaSource::Exact,
                    Some("analytic") => DeltaSource::Analytic {
                        rho: call.required_number("rho")?,
                        sigma: call.number("sigma")?.unwrap_or(1.0),
                        beta: call.number("beta")?.unwrap_or(1.0),
                        sig_eps: call.number("sig_eps")?.unwrap_or(0.0),
                    },
                    Some(other) => return Err(grammar_error(other, "expected exact or analytic")),
                };
                EstimatorSpec::Delta { covariances }
            }
            "delta_t_y1" => {
                keys(&[])?;
                EstimatorSpec::DeltaTy1
            }
            "delta_x" => {
                keys(&["coordinate"])?;
                EstimatorSpec::DeltaX {
                    coordinate: coordinate()?,
                }
            }
            "cov_hat_xx" => {
                keys(&["c", "row", "col"])?;
                EstimatorSpec::CovHatXx {
                    c: call.required_number("c")?,
                    row: call.count("row")?.unwrap_or(0),
                    col: call.count("col")?.unwrap_or(0),
                }
            }
            "cov_hat_xy" => {
                keys(&["c", "coordinate"])?;
                EstimatorSpec::CovHatXy {
                    c: call.required_number("c")?,
                    coordinate: coordinate()?,
                }
            }
            other => return Err(grammar_error(other, "unknown estimator")),
        };
        let name = call.word("name")?.unwrap_or(&call.name).to_string();
        Ok(NamedEstimator { name, estimator })
    }
}

fn resized(design: &DesignSpec, n: &[f64]) -> Result<DesignSpec> {
    let counts = n
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(grammar_error("n", &format!("{v} is not a sample size")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let single = || -> Result<usize> {
        match counts[..] {
            [n] => Ok(n),
            _ => Err(grammar_error("n", "expected a single sample size")),
        }
    };
    Ok(match design {
        DesignSpec::Census => DesignSpec::Census,
        DesignSpec::Srswor { .. } => DesignSpec::Srswor { n: single()? },
        DesignSpec::Stratified { .. } => DesignSpec::Stratified { n: counts },
        DesignSpec::Cluster { m, .. } => DesignSpec::Cluster { n: single()?, m: *m },
        DesignSpec::ClusterWr { .. } => DesignSpec::ClusterWr { n: single()? },
        DesignSpec::Nested { .. } => return Err(Error::unsupported("two_sample", "nested")),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSpec {
    pub numerator: String,
    pub denominator: String,
    #[serde(default)]
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub first: String,
    pub second: String,
    #[serde(default)]
    pub target: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Enumerate,
    #[default]
    Montecarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub population: PopulationSource,
    pub design: DesignSpec,
    pub estimators: Vec<NamedEstimator>,
    #[serde(default)]
    pub ratios: Vec<RatioSpec>,
    #[serde(default)]
    pub covariances: Vec<CovarianceSpec>,
    #[serde(default)]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Covariate totals treated as known; the population totals by default.
    #[serde(default)]
    pub known_t_x: Option<Vec<f64>>,
    /// Analytic reference values copied into the report.
    #[serde(default)]
    pub targets: BTreeMap<String, f64>,
}

impl ExperimentSpec {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("experiment specs serialise");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Execution settings that do not affect results.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub enumeration_cap: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: None,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationInfo {
    pub size: usize,
    pub t_y: f64,
    pub t_x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub failed_replications: usize,
    pub by_kind: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    /// Replications run, or samples enumerated.
    pub replications: usize,
    pub spec_hash: String,
    pub design: String,
    pub population: PopulationInfo,
    pub series: Vec<SeriesSummary>,
    pub ratios: Vec<RatioSummary>,
    pub covariances: Vec<CovarianceSummary>,
    pub failures: FailureSummary,
    pub targets: BTreeMap<String, f64>,
}

impl SimulationReport {
    pub fn series(&self, name: &str) -> Option<&SeriesSummary> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn ratio(&self, numerator: &str, denominator: &str) -> Option<&RatioSummary> {
        self.ratios
            .iter()
            .find(|r| r.numerator == numerator && r.denominator == denominator)
    }

    pub fn covariance(&self, first: &str, second: &str) -> Option<&CovarianceSummary> {
        self.covariances
            .iter()
            .find(|c| c.first == first && c.second == second)
    }
}

/// Per-replication values (NaN where an estimator failed) and error kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationTable {
    pub names: Vec<String>,
    pub first_replication: u64,
    pub values: Vec<Vec<f64>>,
    pub errors: Vec<Vec<Option<&'static str>>>,
}

impl ReplicationTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Appends a table holding the replications right after this one.
    pub fn merge(mut self, other: ReplicationTable) -> Result<ReplicationTable> {
        if self.names != other.names {
            return Err(Error::Configuration(
                "cannot merge tables of different estimators".into(),
            ));
        }
        if other.first_replication != self.first_replication + self.values.len() as u64 {
            return Err(Error::Configuration(format!(
                "replication blocks are not contiguous: {} then {}",
                self.first_replication + self.values.len() as u64,
                other.first_replication
            )));
        }
        self.values.extend(other.values);
        self.errors.extend(other.errors);
        Ok(self)
    }

    fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }
}

enum Prepared {
    Ht,
    Greg,
    Optimal { c: f64 },
    Fixed { beta: Vec<f64> },
    GregBeta { k: usize },
    OptimalBeta { c: f64, k: usize },
    TwoSample { second: Box<Design>, c1: f64, c2: f64 },
    Delta { cov: DeltaCovariances },
    DeltaTy1,
    DeltaX { k: usize },
    CovXx { c: f64, row: usize, col: usize },
    CovXy { c: f64, k: usize },
}

impl Prepared {
    fn needs_nested(&self) -> Option<bool> {
        match self {
            Prepared::Delta { .. } | Prepared::DeltaTy1 | Prepared::DeltaX { .. } => Some(true),
            _ => Some(false),
        }
    }
}

/// A population bound to a spec, ready to evaluate replications.
pub struct Experiment<'a> {
    spec: &'a ExperimentSpec,
    pop: &'a Population,
    design: Design,
    nested: bool,
    known_t_x: Vec<f64>,
    prepared: Vec<(Prepared, Option<f64>)>,
}

impl<'a> Experiment<'a> {
    pub fn new(spec: &'a ExperimentSpec, pop: &'a Population) -> Result<Self> {
        let design = Design::new(spec.design.clone(), pop)?;
        let nested = matches!(spec.design, DesignSpec::Nested { .. });
        let p = pop.dim();
        let known_t_x = match &spec.known_t_x {
            Some(t) if t.len() != p => {
                return Err(Error::Configuration(format!(
                    "known_t_x has length {}, population has {p} covariates",
                    t.len()
                )))
            }
            Some(t) => t.clone(),
            None => pop.t_x().to_vec(),
        };
        if spec.estimators.is_empty() {
            return Err(Error::Configuration("no estimators requested".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &spec.estimators {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Configuration(format!(
                    "duplicate estimator name '{}'",
                    e.name
                )));
            }
        }
        let coord = |k: usize| -> Result<usize> {
            if k < p {
                Ok(k)
            } else {
                Err(Error::Configuration(format!(
                    "coordinate {k} out of range for p={p}"
                )))
            }
        };
        let default_c = recommended_c(&design);
        let t_y = pop.t_y();
        let mut prepared = Vec::with_capacity(spec.estimators.len());
        let mut exact_cov = None;
        for named in &spec.estimators {
            let item = match &named.estimator {
                EstimatorSpec::Ht => (Prepared::Ht, Some(t_y)),
                EstimatorSpec::Greg => (Prepared::Greg, Some(t_y)),
                EstimatorSpec::Optimal { c } => (
                    Prepared::Optimal {
                        c: c.unwrap_or(default_c),
                    },
                    Some(t_y),
                ),
                EstimatorSpec::OptimalExact => (
                    Prepared::Fixed {
                        beta: beta_o_true(&design, pop)?.beta,
                    },
                    Some(t_y),
                ),
                EstimatorSpec::FixedBeta { beta } => {
                    if beta.len() != p {
                        return Err(Error::Configuration(format!(
                            "'{}': beta has length {}, expected {p}",
                            named.name,
                            beta.len()
                        )));
                    }
                    (Prepared::Fixed { beta: beta.clone() }, Some(t_y))
                }
                EstimatorSpec::GregBeta { coordinate } => (
                    Prepared::GregBeta {
                        k: coord(*coordinate)?,
                    },
                    None,
                ),
                EstimatorSpec::OptimalBeta { c, coordinate } => (
                    Prepared::OptimalBeta {
                        c: c.unwrap_or(default_c),
                        k: coord(*coordinate)?,
                    },
                    None,
                ),
                EstimatorSpec::TwoSample { second, c } => {
                    let second = Design::new(second.clone(), pop)?;
                    let c2 = recommended_c(&second);
                    (
                        Prepared::TwoSample {
                            second: Box::new(second),
                            c1: c.unwrap_or(default_c),
                            c2,
                        },
                        Some(t_y),
                    )
                }
                EstimatorSpec::Delta { covariances } => {
                    let cov = match covariances {
                        DeltaSource::Exact => DeltaCovariances::exact(&design, pop)?,
                        DeltaSource::Analytic {
                            rho,
                            sigma,
                            beta,
                            sig_eps,
                        } => {
                            let n = match &spec.design {
                                DesignSpec::Nested { outer, .. } => match outer.as_ref() {
                                    DesignSpec::ClusterWr { n } | DesignSpec::Cluster { n, .. } => *n,
                                    _ => 0,
                                },
                                _ => 0,
                            };
                            if n == 0 || p != 1 {
                                return Err(Error::Configuration(
                                    "analytic delta covariances need a nested design and p = 1".into(),
                                ));
                            }
                            let k = pop.len() / design.block_count();
                            DeltaCovariances::example3(n, pop.len(), k, *rho, *sigma, *beta, *sig_eps)
                        }
                    };
                    (Prepared::Delta { cov }, Some(t_y))
                }
                EstimatorSpec::DeltaTy1 => (Prepared::DeltaTy1, Some(t_y)),
                EstimatorSpec::DeltaX { coordinate } => (
                    Prepared::DeltaX {
                        k: coord(*coordinate)?,
                    },
                    Some(0.0),
                ),
                EstimatorSpec::CovHatXx { c, row, col } => {
                    let exact = match &exact_cov {
                        Some(e) => e,
                        None => exact_cov.insert(cov_exact(&design, pop)?),
                    };
                    let (row, col) = (coord(*row)?, coord(*col)?);
                    (
                        Prepared::CovXx { c: *c, row, col },
                        Some(exact.sigma_xx[(row, col)]),
                    )
                }
                EstimatorSpec::CovHatXy { c, coordinate } => {
                    let exact = match &exact_cov {
                        Some(e) => e,
                        None => exact_cov.insert(cov_exact(&design, pop)?),
                    };
                    let k = coord(*coordinate)?;
                    (Prepared::CovXy { c: *c, k }, Some(exact.sigma_xy[k]))
                }
            };
            if item.0.needs_nested() != Some(nested) {
                return Err(Error::Configuration(format!(
                    "estimator '{}' does not fit a {} design",
                    named.name,
                    design.kind_name()
                )));
            }
            prepared.push(item);
        }
        Ok(Self {
            spec,
            pop,
            design,
            nested,
            known_t_x,
            prepared,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    fn evaluate_plain(&self, sample: &Sample, rng: &mut ChaCha8Rng) -> Vec<Result<f64>> {
        let (pop, d, t) = (self.pop, &self.design, &self.known_t_x[..]);
        self.prepared
            .iter()
            .map(|(prep, _)| match prep {
                Prepared::Ht => ht_totals(sample, d, pop).map(|v| v.t_y_hat),
                Prepared::Greg => greg_estimate(sample, d, pop, None, t),
                Prepared::Optimal { c } => optimal_estimate(sample, d, pop, *c, t),
                Prepared::Fixed { beta } => fixed_beta_estimate(sample, d, pop, beta, t),
                Prepared::GregBeta { k } => greg_beta_hat(sample, d, pop, None).map(|b| b.beta[*k]),
                Prepared::OptimalBeta { c, k } => beta_o_hat(sample, d, pop, *c, t).map(|b| b.beta[*k]),
                Prepared::TwoSample { second, c1, c2 } => {
                    let s2 = second.draw(rng)?;
                    let centre = ht_totals(&s2, second, pop)?.t_x_hat;
                    let mode = TwoSampleCovariance::PlugIn {
                        c1: *c1,
                        c2: *c2,
                        centre,
                    };
                    two_sample_estimate((sample, d), (&s2, second), pop, &mode).map(|r| r.estimate)
                }
                Prepared::CovXx { c, row, col } => {
                    cov_hat(sample, d, pop, *c, t).map(|e| e.sigma_xx_hat[(*row, *col)])
                }
                Prepared::CovXy { c, k } => cov_hat(sample, d, pop, *c, t).map(|e| e.sigma_xy_hat[*k]),
                Prepared::Delta { .. } | Prepared::DeltaTy1 | Prepared::DeltaX { .. } => {
                    unreachable!("checked when the experiment was prepared")
                }
            })
            .collect()
    }

    fn evaluate_nested(&self, sample: &NestedSample) -> Vec<Result<f64>> {
        // Every nested statistic shares one evaluation; t̂_Y¹ and δ̂_X do
        // not depend on the covariances.
        let zero = DeltaCovariances::new(
            nalgebra::DMatrix::zeros(self.pop.dim(), self.pop.dim()),
            nalgebra::DVector::zeros(self.pop.dim()),
        );
        self.prepared
            .iter()
            .map(|(prep, _)| match prep {
                Prepared::Delta { cov } => {
                    delta_estimate(sample, &self.design, self.pop, cov).map(|r| r.estimate)
                }
                Prepared::DeltaTy1 => {
                    delta_estimate(sample, &self.design, self.pop, &zero).map(|r| r.t_y1_hat)
                }
                Prepared::DeltaX { k } => {
                    delta_estimate(sample, &self.design, self.pop, &zero).map(|r| r.delta_x_hat[*k])
                }
                _ => unreachable!("checked when the experiment was prepared"),
            })
            .collect()
    }

    fn replicate(&self, rep: u64) -> (Vec<f64>, Vec<Option<&'static str>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(rep);
        let outcomes = if self.nested {
            match self.design.draw_nested(&mut rng) {
                Ok(s) => self.evaluate_nested(&s),
                Err(e) => vec![Err(e)],
            }
        } else {
            match self.design.draw(&mut rng) {
                Ok(s) => self.evaluate_plain(&s, &mut rng),
                Err(e) => vec![Err(e)],
            }
        };
        split_outcomes(outcomes, self.prepared.len())
    }

    /// Runs replications `range` (Monte Carlo mode).
    pub fn run_block(&self, range: std::ops::Range<u64>, options: &RunOptions) -> Result<ReplicationTable> {
        let work = || -> Vec<(Vec<f64>, Vec<Option<&'static str>>)> {
            range.clone().into_par_iter().map(|r| self.replicate(r)).collect()
        };
        let rows = match options.threads {
            None => work(),
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Configuration(format!("cannot start worker pool: {e}")))?
                .install(work),
        };
        let (values, errors) = rows.into_iter().unzip();
        Ok(ReplicationTable {
            names: self.names(),
            first_replication: range.start,
            values,
            errors,
        })
    }

    /// Visits every sample of the design (enumerate mode), returning the
    /// table and the sample probabilities.
    pub fn enumerate(&self, options: &RunOptions) -> Result<(ReplicationTable, Vec<f64>)> {
        if self.nested
            || self
                .prepared
                .iter()
                .any(|(p, _)| matches!(p, Prepared::TwoSample { .. }))
        {
            return Err(Error::Configuration(
                "enumerate mode supports single-sample estimators on non-nested designs".into(),
            ));
        }
        let mut values = Vec::new();
        let mut errors = Vec::new();
        let mut probs = Vec::new();
        // Single-sample estimators never touch the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        for (sample, p) in self.design.enumerate_samples(options.enumeration_cap)? {
            let (v, e) = split_outcomes(self.evaluate_plain(&sample, &mut rng), self.prepared.len());
            values.push(v);
            errors.push(e);
            probs.push(p);
        }
        Ok((
            ReplicationTable {
                names: self.names(),
                first_replication: 0,
                values,
                errors,
            },
            probs,
        ))
    }

    fn names(&self) -> Vec<String> {
        self.spec.estimators.iter().map(|e| e.name.clone()).collect()
    }

    /// Summarises a table, enforcing the failure budget.
    pub fn report(
        &self,
        table: &ReplicationTable,
        probabilities: Option<&[f64]>,
    ) -> Result<SimulationReport> {
        let total = table.len();
        let mut by_kind = BTreeMap::new();
        let mut failed = 0;
        for row in &table.errors {
            if row.iter().any(Option::is_some) {
                failed += 1;
            }
            for kind in row.iter().flatten() {
                *by_kind.entry(kind.to_string()).or_insert(0) += 1;
            }
        }
        if failed as f64 > FAILURE_BUDGET * total as f64 {
            let summary = by_kind
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::ReplicationFailures {
                failed,
                total,
                summary,
            });
        }
        let weighting = match probabilities {
            Some(p) => Weighting::Probabilities(p),
            None => Weighting::Equal,
        };
        let index = |name: &str| -> Result<usize> {
            table
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Configuration(format!("unknown estimator name '{name}'")))
        };
        let series = self
            .prepared
            .iter()
            .enumerate()
            .map(|(k, (_, target))| summarize_series(&table.names[k], &table.column(k), *target, &weighting))
            .collect();
        let ratios = self
            .spec
            .ratios
            .iter()
            .map(|r| {
                let (a, b) = (index(&r.numerator)?, index(&r.denominator)?);
                Ok(summarize_ratio(
                    &r.numerator,
                    &r.denominator,
                    &table.column(a),
                    &table.column(b),
                    r.target,
                    &weighting,
                ))
            })
            .collect::<Result<_>>()?;
        let covariances = self
            .spec
            .covariances
            .iter()
            .map(|c| {
                let (a, b) = (index(&c.first)?, index(&c.second)?);
                Ok(summarize_covariance(
                    &c.first,
                    &c.second,
                    &table.column(a),
                    &table.column(b),
                    c.target,
                    &weighting,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(SimulationReport {
            schema_version: SCHEMA_VERSION,
            mode: if probabilities.is_some() {
                Mode::Enumerate
            } else {
                Mode::Montecarlo
            },
            seed: self.spec.seed,
            replications: total,
            spec_hash: self.spec.hash(),
            design: self.spec.design.to_string(),
            population: PopulationInfo {
                size: self.pop.len(),
                t_y: self.pop.t_y(),
                t_x: self.pop.t_x().to_vec(),
            },
            series,
            ratios,
            covariances,
            failures: FailureSummary {
                failed_replications: failed,
                by_kind,
            },
            targets: self.spec.targets.clone(),
        })
    }
}

fn split_outcomes(outcomes: Vec<Result<f64>>, width: usize) -> (Vec<f64>, Vec<Option<&'static str>>) {
    if outcomes.len() == 1 && width != 1 {
        // A failed draw takes every estimator down with it.
        let kind = outcomes[0].as_ref().err().map(Error::kind);
        return (vec![f64::NAN; width], vec![kind; width]);
    }
    outcomes
        .into_iter()
        .map(|o| match o {
            Ok(v) if v.is_finite() => (v, None),
            Ok(_) => (f64::NAN, Some("non_finite")),
            Err(e) => (f64::NAN, Some(e.kind())),
        })
        .unzip()
}

/// Runs an experiment on an already-loaded population.
pub fn run_with_population(
    spec: &ExperimentSpec,
    pop: &Population,
    options: &RunOptions,
) -> Result<SimulationReport> {
    let exp = Experiment::new(spec, pop)?;
    match spec.mode {
        Mode::Enumerate => {
            let (table, probs) = exp.enumerate(options)?;
            exp.report(&table, Some(&probs))
        }
        Mode::Montecarlo => {
            if spec.replications < 2 {
                return Err(Error::Configuration(format!(
                    "Monte Carlo mode needs at least 2 replications, got {}",
                    spec.replications
                )));
            }
            let table = exp.run_block(0..spec.replications as u64, options)?;
            exp.report(&table, None)
        }
    }
}

pub fn run_experiment(spec: &ExperimentSpec, options: &RunOptions) -> Result<SimulationReport> {
    let pop = spec.population.load()?;
    run_with_population(spec, &pop, options)
}

/// Exact mean and variance of a sample statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactMoments {
    pub mean: f64,
    pub variance: f64,
    pub samples: usize,
}

/// Exact moments of `statistic` by summing over every sample of the design.
pub fn enumeration_oracle<F>(design: &Design, cap: u64, mut statistic: F) -> Result<ExactMoments>
where
    F: FnMut(&Sample) -> Result<f64>,
{
    let mut values = Vec::new();
    let mut probs = Vec::new();
    for (s, p) in design.enumerate_samples(cap)? {
        values.push(statistic(&s)?);
        probs.push(p);
    }
    let s = summarize_series("statistic", &values, None, &Weighting::Probabilities(&probs));
    Ok(ExactMoments {
        mean: s.mean,
        variance: s.variance,
        samples: values.len(),
    })
}
