//! Finite populations: construction, CSV ingestion, and the synthetic
//! superpopulation generators used by the packaged experiments.
//!
//! A population is immutable once built. Totals are accumulated with
//! compensated summation in unit order, so recomputing them from the units
//! with [`crate::numeric::compensated_sum`] reproduces the stored values bit
//! for bit.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::grammar::{grammar_error, parse_call, Call};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// One unit of the finite universe. Ids are zero-based positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: usize,
    pub y: f64,
    pub x: Vec<f64>,
    #[serde(default)]
    pub stratum: Option<u32>,
    #[serde(default)]
    pub cluster: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    units: Vec<Unit>,
    dim: usize,
    t_y: f64,
    t_x: Vec<f64>,
    stratum_names: Vec<String>,
    cluster_names: Vec<String>,
}

impl Population {
    /// Builds a population, checking covariate dimensions and id contiguity.
    pub fn new(units: Vec<Unit>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        let dim = units[0].x.len();
        for (pos, u) in units.iter().enumerate() {
            if u.id != pos {
                return Err(Error::Argument(format!(
                    "unit ids must be contiguous from 0; found id {} at position {pos}",
                    u.id
                )));
            }
            if u.x.len() != dim {
                return Err(Error::Argument(format!(
                    "unit {pos} has {} covariates, expected {dim}",
                    u.x.len()
                )));
            }
        }
        let t_y = compensated_sum(units.iter().map(|u| u.y));
        let t_x = (0..dim)
            .map(|k| compensated_sum(units.iter().map(|u| u.x[k])))
            .collect();
        let stratum_names = label_names(units.iter().map(|u| u.stratum));
        let cluster_names = label_names(units.iter().map(|u| u.cluster));
        Ok(Self {
            units,
            dim,
            t_y,
            t_x,
            stratum_names,
            cluster_names,
        })
    }

    /// Unlabelled population from parallel response and covariate columns.
    pub fn from_columns(y: &[f64], x: &[Vec<f64>]) -> Result<Self> {
        if y.len() != x.len() {
            return Err(Error::Argument(format!(
                "{} responses but {} covariate rows",
                y.len(),
                x.len()
            )));
        }
        let units = y
            .iter()
            .zip(x)
            .enumerate()
            .map(|(id, (&y, x))| Unit {
                id,
                y,
                x: x.clone(),
                stratum: None,
                cluster: None,
            })
            .collect();
        Self::new(units)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Covariate dimension p.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn unit(&self, id: usize) -> &Unit {
        &self.units[id]
    }

    pub fn t_y(&self) -> f64 {
        self.t_y
    }

    pub fn t_x(&self) -> &[f64] {
        &self.t_x
    }

    pub fn y_values(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.y).collect()
    }

    /// Display names for stratum codes, indexed by code.
    pub fn stratum_names(&self) -> &[String] {
        &self.stratum_names
    }

    pub fn cluster_names(&self) -> &[String] {
        &self.cluster_names
    }

    fn with_names(mut self, strata: Vec<String>, clusters: Vec<String>) -> Self {
        if !strata.is_empty() {
            self.stratum_names = strata;
        }
        if !clusters.is_empty() {
            self.cluster_names = clusters;
        }
        self
    }
}

fn label_names(codes: impl Iterator<Item = Option<u32>>) -> Vec<String> {
    let max = codes.flatten().max();
    match max {
        Some(m) => (0..=m).map(|c| c.to_string()).collect(),
        None => Vec::new(),
    }
}

/// Column mapping for CSV ingestion. Empty `x` means every column named
/// `x1`, `x2`, ... in numeric order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub y: String,
    #[serde(default)]
    pub x: Vec<String>,
    #[serde(default)]
    pub stratum: Option<String>,
    #[serde(default)]
    pub cluster: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            y: "y".into(),
            x: Vec::new(),
            stratum: None,
            cluster: None,
        }
    }
}

pub fn load_population(path: impl AsRef<Path>, schema: &Schema) -> Result<Population> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_population(file, schema)
}

/// Reads a headed CSV population. Rows in error messages are 1-based data
/// rows (the header is not counted).
pub fn read_population<R: Read>(reader: R, schema: &Schema) -> Result<Population> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(Error::Schema(format!("cannot read header: {e}"))),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyPopulation);
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let y_col = find(&schema.y)?;
    let x_names: Vec<String> = if schema.x.is_empty() {
        let mut auto: Vec<(usize, String)> = headers
            .iter()
            .filter_map(|h| {
                h.strip_prefix('x')
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .map(|k| (k, h.to_string()))
            })
            .collect();
        auto.sort();
        auto.into_iter().map(|(_, h)| h).collect()
    } else {
        schema.x.clone()
    };
    if x_names.is_empty() {
        return Err(Error::Schema("no covariate columns (x1..xp) found".into()));
    }
    let x_cols = x_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let optional = |explicit: &Option<String>, default: &str| -> Result<Option<usize>> {
        match explicit {
            Some(name) => find(name).map(Some),
            None => Ok(headers.iter().position(|h| h == default)),
        }
    };
    let stratum_col = optional(&schema.stratum, "stratum")?;
    let cluster_col = optional(&schema.cluster, "cluster")?;

    let mut strata = LabelCoder::default();
    let mut clusters = LabelCoder::default();
    let mut units = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: headers[col].to_string(),
                message: format!("'{raw}' is not a number"),
            })
        };
        let y = cell(y_col)?;
        let x = x_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
        let stratum = stratum_col.map(|c| strata.code(record.get(c).unwrap_or("")));
        let cluster = cluster_col.map(|c| clusters.code(record.get(c).unwrap_or("")));
        units.push(Unit {
            id: units.len(),
            y,
            x,
            stratum,
            cluster,
        });
    }
    if units.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    Ok(Population::new(units)?.with_names(strata.names, clusters.names))
}

/// Maps arbitrary labels to dense codes in order of first appearance.
#[derive(Default)]
struct LabelCoder {
    codes: HashMap<String, u32>,
    names: Vec<String>,
}

impl LabelCoder {
    fn code(&mut self, label: &str) -> u32 {
        if let Some(&c) = self.codes.get(label) {
            return c;
        }
        let c = self.names.len() as u32;
        self.codes.insert(label.to_string(), c);
        self.names.push(label.to_string());
        c
    }
}

/// Whether generated covariates are raw draws or are standardised so the
/// population moments equal the model moments exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moments {
    #[default]
    Sampled,
    Exact,
}

/// Parameters of the three synthetic superpopulations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SuperpopSpec {
    /// Two equal strata with x-means -1 and +1 and y fixed at -1 / +1.
    Stratified2 {
        per_stratum: usize,
        sigma: f64,
        #[serde(default)]
        moments: Moments,
        seed: u64,
    },
    /// Clusters sharing a centre s_j: x = s + eps, y = s + gamma * nu.
    ClusterLinear {
        clusters: usize,
        cluster_size: usize,
        var_s: f64,
        var_eps: f64,
        var_nu: f64,
        gamma: f64,
        seed: u64,
    },
    /// Exchangeably correlated x within clusters, y = beta * x + eps.
    ClusterCorr {
        clusters: usize,
        cluster_size: usize,
        beta: f64,
        sigma: f64,
        rho: f64,
        sig_eps: f64,
        #[serde(default)]
        moments: Moments,
        seed: u64,
    },
}

impl SuperpopSpec {
    /// Parses `example1(per_stratum=1000, sigma=1, moments=exact, seed=101)`,
    /// `example2(clusters=5000, cluster_size=5, ...)` or
    /// `example3(clusters=10000, cluster_size=4, rho=0.2, ...)`. Omitted
    /// arguments take the example defaults.
    pub fn parse(input: &str) -> Result<Self> {
        let call = parse_call(input)?;
        let moments = |call: &Call| -> Result<Moments> {
            match call.word("moments")? {
                None | Some("exact") => Ok(Moments::Exact),
                Some("sampled") => Ok(Moments::Sampled),
                Some(other) => Err(grammar_error(other, "expected exact or sampled")),
            }
        };
        let seed = |call: &Call, default: u64| -> Result<u64> {
            Ok(call.count("seed")?.map_or(default, |s| s as u64))
        };
        let spec = match call.name.as_str() {
            "example1" => {
                call.expect_keys(&["per_stratum", "sigma", "moments", "seed"])?;
                SuperpopSpec::Stratified2 {
                    per_stratum: call.count("per_stratum")?.unwrap_or(1000),
                    sigma: call.number("sigma")?.unwrap_or(1.0),
                    moments: moments(&call)?,
                    seed: seed(&call, 101)?,
                }
            }
            "example2" => {
                call.expect_keys(&[
                    "clusters",
                    "cluster_size",
                    "var_s",
                    "var_eps",
                    "var_nu",
                    "gamma",
                    "seed",
                ])?;
                SuperpopSpec::ClusterLinear {
                    clusters: call.count("clusters")?.unwrap_or(5000),
                    cluster_size: call.count("cluster_size")?.unwrap_or(5),
                    var_s: call.number("var_s")?.unwrap_or(1.0),
                    var_eps: call.number("var_eps")?.unwrap_or(1.0),
                    var_nu: call.number("var_nu")?.unwrap_or(1.0),
                    gamma: call.number("gamma")?.unwrap_or(1.0),
                    seed: seed(&call, 202)?,
                }
            }
            "example3" => {
                call.expect_keys(&[
                    "clusters",
                    "cluster_size",
                    "beta",
                    "sigma",
                    "rho",
                    "sig_eps",
                    "moments",
                    "seed",
                ])?;
                SuperpopSpec::ClusterCorr {
                    clusters: call.count("clusters")?.unwrap_or(10_000),
                    cluster_size: call.count("cluster_size")?.unwrap_or(4),
                    beta: call.number("beta")?.unwrap_or(1.0),
                    sigma: call.number("sigma")?.unwrap_or(1.0),
                    rho: call.number("rho")?.unwrap_or(0.2),
                    sig_eps: call.number("sig_eps")?.unwrap_or(0.0),
                    moments: moments(&call)?,
                    seed: seed(&call, 303)?,
                }
            }
            other => {
                return Err(grammar_error(
                    other,
                    "unknown generator; expected example1, example2 or example3",
                ))
            }
        };
        Ok(spec)
    }

    pub fn generate(&self) -> Result<Population> {
        match *self {
            SuperpopSpec::Stratified2 {
                per_stratum,
                sigma,
                moments,
                seed,
            } => generate_example1(per_stratum, sigma, moments, seed),
            SuperpopSpec::ClusterLinear {
                clusters,
                cluster_size,
                var_s,
                var_eps,
                var_nu,
                gamma,
                seed,
            } => generate_example2(clusters, cluster_size, var_s, var_eps, var_nu, gamma, seed),
            SuperpopSpec::ClusterCorr {
                clusters,
                cluster_size,
                beta,
                sigma,
                rho,
                sig_eps,
                moments,
                seed,
            } => generate_example3(clusters, cluster_size, beta, sigma, rho, sig_eps, moments, seed),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "{name} must be a finite value >= 0, got {v}"
        )))
    }
}

/// Two strata of `per_stratum` units each. Stratum 0 has x-mean -1 and
/// y = -1, stratum 1 has x-mean +1 and y = +1; x varies with standard
/// deviation `sigma` around the stratum mean.
pub fn generate_example1(per_stratum: usize, sigma: f64, moments: Moments, seed: u64) -> Result<Population> {
    if per_stratum < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 units per stratum, got {per_stratum}"
        )));
    }
    check_nonneg("sigma", sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::with_capacity(2 * per_stratum);
    for (stratum, mean) in [(0u32, -1.0), (1u32, 1.0)] {
        let mut z: Vec<f64> = (0..per_stratum).map(|_| normal(&mut rng)).collect();
        if moments == Moments::Exact {
            standardize(&mut z);
        }
        for zk in z {
            units.push(Unit {
                id: units.len(),
                y: mean,
                x: vec![mean + sigma * zk],
                stratum: Some(stratum),
                cluster: None,
            });
        }
    }
    Population::new(units)
}

/// Centres `z` and rescales it to unit population variance (divisor len).
fn standardize(z: &mut [f64]) {
    let n = z.len() as f64;
    let mean = compensated_sum(z.iter().copied()) / n;
    for v in z.iter_mut() {
        *v -= mean;
    }
    let var = compensated_sum(z.iter().map(|v| v * v)) / n;
    if var > 0.0 {
        let sd = var.sqrt();
        for v in z.iter_mut() {
            *v /= sd;
        }
    }
}

/// `clusters` clusters of `cluster_size` units. Variances are the model's
/// Sigma_s, Sigma_eps and Sigma_nu; all draws are independent normals.
pub fn generate_example2(
    clusters: usize,
    cluster_size: usize,
    var_s: f64,
    var_eps: f64,
    var_nu: f64,
    gamma: f64,
    seed: u64,
) -> Result<Population> {
    if clusters < 2 || cluster_size < 1 {
        return Err(Error::Argument(format!(
            "need M >= 2 clusters of K >= 1 units, got M={clusters}, K={cluster_size}"
        )));
    }
    check_nonneg("var_s", var_s)?;
    check_nonneg("var_eps", var_eps)?;
    check_nonneg("var_nu", var_nu)?;
    if !gamma.is_finite() {
        return Err(Error::Argument("gamma must be finite".into()));
    }
    let (sd_s, sd_eps, sd_nu) = (var_s.sqrt(), var_eps.sqrt(), var_nu.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::with_capacity(clusters * cluster_size);
    for j in 0..clusters {
        let s = sd_s * normal(&mut rng);
        for _ in 0..cluster_size {
            let eps = sd_eps * normal(&mut rng);
            let nu = sd_nu * normal(&mut rng);
            units.push(Unit {
                id: units.len(),
                y: s + gamma * nu,
                x: vec![s + eps],
                stratum: None,
                cluster: Some(j as u32),
            });
        }
    }
    Population::new(units)
}

/// Exchangeable intra-cluster covariance `sigma^2 [(1 - rho) I + rho 11']`.
pub fn exchangeable_covariance(k: usize, sigma: f64, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            sigma * sigma
        } else {
            sigma * sigma * rho
        }
    })
}

/// Symmetric square root; eigenvalues within rounding of zero are clamped.
fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut root = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-12 * scale {
            return Err(Error::Argument(format!(
                "covariance is not positive semidefinite (eigenvalue {lambda:.3e})"
            )));
        }
        if lambda <= 1e-12 * scale {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        root += (v * v.transpose()) * lambda.sqrt();
    }
    Ok(root)
}

/// `clusters` clusters of `cluster_size` units with exchangeably correlated
/// covariates and `y = beta * x + sig_eps * N(0, 1)`.
///
/// With [`Moments::Exact`] the covariate vectors are whitened and recoloured
/// so that, across clusters, their mean is exactly zero and their covariance
/// (divisor M) is exactly the exchangeable target.
#[allow(clippy::too_many_arguments)]
pub fn generate_example3(
    clusters: usize,
    cluster_size: usize,
    beta: f64,
    sigma: f64,
    rho: f64,
    sig_eps: f64,
    moments: Moments,
    seed: u64,
) -> Result<Population> {
    let k = cluster_size;
    if clusters < 2 || k < 2 {
        return Err(Error::Argument(format!(
            "need M >= 2 clusters of K >= 2 units, got M={clusters}, K={k}"
        )));
    }
    check_nonneg("sigma", sigma)?;
    check_nonneg("sig_eps", sig_eps)?;
    let lower = -1.0 / (k as f64 - 1.0);
    if !(rho >= lower - 1e-12 && rho <= 1.0 + 1e-12) {
        return Err(Error::Argument(format!(
            "rho={rho} outside [{lower}, 1]; the intra-cluster covariance would not be PSD"
        )));
    }
    if moments == Moments::Exact && clusters <= k {
        return Err(Error::Argument(format!(
            "exact moments need more clusters than the cluster size (M={clusters}, K={k})"
        )));
    }
    let target_root = psd_sqrt(&exchangeable_covariance(k, sigma, rho))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::from_fn(clusters, k, |_, _| 0.0);
    for j in 0..clusters {
        for c in 0..k {
            z[(j, c)] = normal(&mut rng);
        }
    }
    if moments == Moments::Exact {
        z = whiten(z)?;
    }
    let x = z * &target_root;
    let mut units = Vec::with_capacity(clusters * k);
    for j in 0..clusters {
        for c in 0..k {
            let xv = x[(j, c)];
            let eps = if sig_eps > 0.0 {
                sig_eps * normal(&mut rng)
            } else {
                0.0
            };
            units.push(Unit {
                id: units.len(),
                y: beta * xv + eps,
                x: vec![xv],
                stratum: None,
                cluster: Some(j as u32),
            });
        }
    }
    Population::new(units)
}

/// Centres the columns of `z` and rotates them to identity covariance
/// (divisor = number of rows).
fn whiten(mut z: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = z.nrows() as f64;
    for c in 0..z.ncols() {
        let mean = compensated_sum(z.column(c).iter().copied()) / m;
        z.column_mut(c).add_scalar_mut(-mean);
    }
    let cov = z.transpose() * &z / m;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Argument("draws are degenerate; cannot impose exact moments".into()))?;
    // z L^{-T} has identity covariance when cov = L L^T.
    let l = chol.l();
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Argument("cannot invert whitening factor".into()))?;
    Ok(z * lt_inv)
}
