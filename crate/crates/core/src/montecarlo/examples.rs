//! Packaged reproductions of the three worked examples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    run_experiment, CovarianceSpec, DeltaSource, EstimatorSpec, ExperimentSpec, Mode, NamedEstimator,
    PopulationSource, RatioSpec, RunOptions, SimulationReport,
};
use crate::design::{DesignSpec, InnerRule};
use crate::error::{Error, Result};
use crate::population::{Moments, SuperpopSpec};

/// Two strata, y fixed by stratum, x noisy around the stratum mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Example1Params {
    pub per_stratum: usize,
    pub n_per_stratum: usize,
    pub sigma: f64,
    pub moments: Moments,
    pub replications: usize,
    pub seed: u64,
    pub population_seed: u64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Self {
            per_stratum: 1000,
            n_per_stratum: 50,
            sigma: 1.0,
            moments: Moments::Exact,
            replications: 10_000,
            seed: 1,
            population_seed: 101,
        }
    }
}

/// Reports GREG `T(β̂)`, plug-in `T(β̂₀)` and the spread of `β̂`.
///
/// Targets: `beta_hat_limit` = 1/(1+σ²) and `ratio_bound` = 0.05 for
/// `Var(T(β̂₀)) / Var(T(β̂))`.
pub fn reproduce_example1(params: &Example1Params, options: &RunOptions) -> Result<SimulationReport> {
    let p = params;
    let mut targets = BTreeMap::new();
    targets.insert("beta_hat_limit".into(), 1.0 / (1.0 + p.sigma * p.sigma));
    targets.insert("ratio_bound".into(), 0.05);
    let spec = ExperimentSpec {
        population: PopulationSource::Generator {
            spec: SuperpopSpec::Stratified2 {
                per_stratum: p.per_stratum,
                sigma: p.sigma,
                moments: p.moments,
                seed: p.population_seed,
            },
        },
        design: DesignSpec::Stratified {
            n: vec![p.n_per_stratum; 2],
        },
        estimators: vec![
            NamedEstimator::new("ht", EstimatorSpec::Ht),
            NamedEstimator::new("greg", EstimatorSpec::Greg),
            NamedEstimator::new("optimal", EstimatorSpec::Optimal { c: None }),
            NamedEstimator::new("greg_beta", EstimatorSpec::GregBeta { coordinate: 0 }),
            NamedEstimator::new(
                "optimal_beta",
                EstimatorSpec::OptimalBeta {
                    c: None,
                    coordinate: 0,
                },
            ),
        ],
        ratios: vec![RatioSpec {
            numerator: "optimal".into(),
            denominator: "greg".into(),
            target: None,
        }],
        covariances: vec![],
        replications: p.replications,
        seed: p.seed,
        mode: Mode::Montecarlo,
        known_t_x: None,
        targets,
    };
    run_experiment(&spec, options)
}

/// Clusters with a shared centre: x = s + ε, y = s + γν.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Example2Params {
    pub clusters: usize,
    pub cluster_size: usize,
    pub n_clusters: usize,
    pub var_s: f64,
    pub var_eps: f64,
    pub var_nu: f64,
    pub gamma: f64,
    pub replications: usize,
    pub seed: u64,
    pub population_seed: u64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Self {
            clusters: 5000,
            cluster_size: 5,
            n_clusters: 200,
            var_s: 1.0,
            var_eps: 1.0,
            var_nu: 1.0,
            gamma: 1.0,
            replications: 10_000,
            seed: 2,
            population_seed: 202,
        }
    }
}

impl Example2Params {
    /// Limit of the GREG coefficient, Σ_s / (Σ_s + Σ_ε).
    pub fn beta_lim(&self) -> f64 {
        self.var_s / (self.var_s + self.var_eps)
    }

    /// Optimal fixed coefficient, Σ_s / (Σ_s + Σ_ε/K).
    pub fn beta_0(&self) -> f64 {
        self.var_s / (self.var_s + self.var_eps / self.cluster_size as f64)
    }

    /// Variance of a cluster total of y − βx under the model.
    pub fn model_variance(&self, beta: f64) -> f64 {
        let k = self.cluster_size as f64;
        k * k * (1.0 - beta).powi(2) * self.var_s
            + k * self.gamma * self.gamma * self.var_nu
            + k * beta * beta * self.var_eps
    }

    pub fn model_ratio(&self) -> f64 {
        self.model_variance(self.beta_0()) / self.model_variance(self.beta_lim())
    }
}

/// Reports fixed-β estimators at `β_lim` and `β₀` plus the plug-in GREG
/// and optimal estimators and their coefficients.
///
/// Targets: `beta_lim`, `beta_0`, `ratio_model` (the model variance ratio,
/// also attached to the ratio row) and, for K = 5 and K = 10, the rounded
/// `ratio_approx` of 0.75 and 0.5.
pub fn reproduce_example2(params: &Example2Params, options: &RunOptions) -> Result<SimulationReport> {
    let p = params;
    let (beta_lim, beta_0, ratio) = (p.beta_lim(), p.beta_0(), p.model_ratio());
    let mut targets = BTreeMap::new();
    targets.insert("beta_lim".into(), beta_lim);
    targets.insert("beta_0".into(), beta_0);
    targets.insert("ratio_model".into(), ratio);
    match p.cluster_size {
        5 => {
            targets.insert("ratio_approx".into(), 0.75);
        }
        10 => {
            targets.insert("ratio_approx".into(), 0.5);
        }
        _ => {}
    }
    let spec = ExperimentSpec {
        population: PopulationSource::Generator {
            spec: SuperpopSpec::ClusterLinear {
                clusters: p.clusters,
                cluster_size: p.cluster_size,
                var_s: p.var_s,
                var_eps: p.var_eps,
                var_nu: p.var_nu,
                gamma: p.gamma,
                seed: p.population_seed,
            },
        },
        design: DesignSpec::Cluster {
            n: p.n_clusters,
            m: None,
        },
        estimators: vec![
            NamedEstimator::new("ht", EstimatorSpec::Ht),
            NamedEstimator::new(
                "fixed_beta_lim",
                EstimatorSpec::FixedBeta { beta: vec![beta_lim] },
            ),
            NamedEstimator::new("fixed_beta_0", EstimatorSpec::FixedBeta { beta: vec![beta_0] }),
            NamedEstimator::new("greg", EstimatorSpec::Greg),
            NamedEstimator::new("optimal", EstimatorSpec::Optimal { c: None }),
            NamedEstimator::new("greg_beta", EstimatorSpec::GregBeta { coordinate: 0 }),
            NamedEstimator::new(
                "optimal_beta",
                EstimatorSpec::OptimalBeta {
                    c: None,
                    coordinate: 0,
                },
            ),
        ],
        ratios: vec![
            RatioSpec {
                numerator: "fixed_beta_0".into(),
                denominator: "fixed_beta_lim".into(),
                target: Some(ratio),
            },
            RatioSpec {
                numerator: "optimal".into(),
                denominator: "greg".into(),
                target: Some(ratio),
            },
        ],
        covariances: vec![],
        replications: p.replications,
        seed: p.seed,
        mode: Mode::Montecarlo,
        known_t_x: None,
        targets,
    };
    run_experiment(&spec, options)
}

/// With-replacement cluster draws: every unit of a drawn cluster has x
/// measured, the first unit also has y measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Example3Params {
    pub clusters: usize,
    pub cluster_size: usize,
    pub n_clusters: usize,
    pub beta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub sig_eps: f64,
    pub moments: Moments,
    pub replications: usize,
    pub seed: u64,
    pub population_seed: u64,
}

impl Default for Example3Params {
    fn default() -> Self {
        Self {
            clusters: 10_000,
            cluster_size: 4,
            n_clusters: 200,
            beta: 1.0,
            sigma: 1.0,
            rho: 0.2,
            sig_eps: 0.0,
            moments: Moments::Exact,
            replications: 20_000,
            seed: 3,
            population_seed: 303,
        }
    }
}

impl Example3Params {
    /// 1 − ((K−1)/K)(1−ρ) when ε vanishes.
    pub fn target_ratio(&self) -> f64 {
        let k = self.cluster_size as f64;
        let shrink = (k - 1.0) / k * (1.0 - self.rho);
        let b2s2 = self.beta * self.beta * self.sigma * self.sigma;
        1.0 - shrink * b2s2 / (b2s2 + self.sig_eps * self.sig_eps)
    }

    fn population_size(&self) -> f64 {
        (self.clusters * self.cluster_size) as f64
    }

    /// (N²/n)(β²σ² + sig_eps²).
    pub fn target_var_t_y1(&self) -> f64 {
        let base = self.population_size().powi(2) / self.n_clusters as f64;
        base * (self.beta.powi(2) * self.sigma.powi(2) + self.sig_eps.powi(2))
    }

    pub fn target_var_delta(&self) -> f64 {
        let k = self.cluster_size as f64;
        let base = self.population_size().powi(2) / self.n_clusters as f64;
        base * (k - 1.0) / k * (1.0 - self.rho) * self.sigma.powi(2)
    }
}

/// Reports `t̂_Y¹`, `δ̂_X` and `t̂_Y¹ − β₀₃δ̂_X` with exact design
/// covariances.
///
/// Targets: `ratio`, `var_t_y1`, `var_delta_x`, `cov_delta_x_t_y1`.
pub fn reproduce_example3(params: &Example3Params, options: &RunOptions) -> Result<SimulationReport> {
    let p = params;
    if p.n_clusters == 0 || p.clusters < 50 * p.n_clusters {
        return Err(Error::Configuration(format!(
            "need M/n >= 50 for the with-replacement approximation, got M={}, n={}",
            p.clusters, p.n_clusters
        )));
    }
    let ratio = p.target_ratio();
    let var_delta = p.target_var_delta();
    let cov = var_delta * p.beta;
    let mut targets = BTreeMap::new();
    targets.insert("ratio".into(), ratio);
    targets.insert("var_t_y1".into(), p.target_var_t_y1());
    targets.insert("var_delta_x".into(), var_delta);
    targets.insert("cov_delta_x_t_y1".into(), cov);
    let spec = ExperimentSpec {
        population: PopulationSource::Generator {
            spec: SuperpopSpec::ClusterCorr {
                clusters: p.clusters,
                cluster_size: p.cluster_size,
                beta: p.beta,
                sigma: p.sigma,
                rho: p.rho,
                sig_eps: p.sig_eps,
                moments: p.moments,
                seed: p.population_seed,
            },
        },
        design: DesignSpec::Nested {
            outer: Box::new(DesignSpec::ClusterWr { n: p.n_clusters }),
            k_measured: 1,
            rule: InnerRule::First,
        },
        estimators: vec![
            NamedEstimator::new("t_y1", EstimatorSpec::DeltaTy1),
            NamedEstimator::new("delta_x", EstimatorSpec::DeltaX { coordinate: 0 }),
            NamedEstimator::new(
                "delta",
                EstimatorSpec::Delta {
                    covariances: DeltaSource::Exact,
                },
            ),
        ],
        ratios: vec![RatioSpec {
            numerator: "delta".into(),
            denominator: "t_y1".into(),
            target: Some(ratio),
        }],
        covariances: vec![CovarianceSpec {
            first: "delta_x".into(),
            second: "t_y1".into(),
            target: Some(cov),
        }],
        replications: p.replications,
        seed: p.seed,
        mode: Mode::Montecarlo,
        known_t_x: None,
        targets,
    };
    run_experiment(&spec, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_ratios() {
        let mut p = Example2Params::default();
        assert!((p.model_ratio() - 11.0 / 15.0).abs() < 1e-12);
        p.cluster_size = 1;
        assert_eq!(p.beta_0(), p.beta_lim());
        assert_eq!(p.model_ratio(), 1.0);
        let q = Example3Params {
            rho: 0.0,
            cluster_size: 2,
            ..Default::default()
        };
        assert!((q.target_ratio() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_example1_runs() {
        let p = Example1Params {
            per_stratum: 100,
            n_per_stratum: 10,
            sigma: 0.0,
            replications: 50,
            ..Default::default()
        };
        let r = reproduce_example1(&p, &RunOptions::default()).unwrap();
        assert_eq!(r.series("optimal").unwrap().variance, 0.0);
    }

    #[test]
    fn example3_needs_many_clusters() {
        let p = Example3Params {
            clusters: 100,
            n_clusters: 10,
            ..Default::default()
        };
        assert!(matches!(
            reproduce_example3(&p, &RunOptions::default()),
            Err(Error::Configuration(_))
        ));
    }
}
