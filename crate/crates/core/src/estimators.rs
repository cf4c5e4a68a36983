//! Point estimators of the population total `t_Y`.
//!
//! Every regression-type estimator here has the form
//! `t̂_Y − βᵀ(t̂_X − t_X)`; they differ in how β is chosen:
//!
//! * GREG: `β̂ = H_q⁻¹ Σ d_i q_i y_i x_i`, the calibration solution;
//! * optimal: `β̂₀ = Σ̂_{t̂X}⁻¹ Σ̂_{t̂X,t̂Y}` from the unbiased pair-sum
//!   covariance estimates, or the exact `β₀` when the design covariances are
//!   known;
//! * two-sample and nested-sample variants replace `t_X` by an estimate from
//!   a second sample.
//!
//! Covariance matrices are inverted with a pseudo-inverse: along a null
//! direction every β gives the same variance, so that component is set to 0
//! and the count is reported in [`BetaEstimate::null_directions`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{cov_exact, pair_sums, per_draw_covariance};
use crate::design::{Design, DesignSpec, InnerRule, NestedSample, Sample};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, pseudo_inverse, solve_spd};
use crate::population::Population;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalsEstimate {
    pub t_y_hat: f64,
    pub t_x_hat: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    Ht,
    Greg,
    Optimal { c: f64 },
}

/// Sample weights, one per sample position (a unit drawn twice under a
/// with-replacement design appears twice).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub units: Vec<usize>,
    pub weights: Vec<f64>,
    pub kind: WeightKind,
    pub calibration_target: Vec<f64>,
}

impl WeightSet {
    /// `Σ w_i v_i` for per-unit values indexed by unit id.
    pub fn estimate(&self, values: &[f64]) -> f64 {
        compensated_sum(self.units.iter().zip(&self.weights).map(|(&u, w)| w * values[u]))
    }

    /// `Σ w_i x_i − calibration_target`.
    pub fn calibration_residual(&self, pop: &Population) -> Vec<f64> {
        (0..pop.dim())
            .map(|k| {
                compensated_sum(
                    self.units
                        .iter()
                        .zip(&self.weights)
                        .map(|(&u, w)| w * pop.unit(u).x[k]),
                ) - self.calibration_target[k]
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    GregBetaHat,
    OptimalBetaHat,
    OptimalBetaTrue,
    TwoSample,
    Delta,
    OlsPopulation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: Vec<f64>,
    pub kind: BetaKind,
    /// Directions in which the covariance matrix was numerically singular.
    pub null_directions: usize,
}

/// `Σ_{i∈S} values_i · expansion_i` with `values` indexed by unit id.
pub fn ht_total(sample: &Sample, design: &Design, values: &[f64]) -> Result<f64> {
    if values.len() != design.population_size() {
        return Err(Error::Argument(format!(
            "{} values supplied for a population of {}",
            values.len(),
            design.population_size()
        )));
    }
    let d = expansions(sample, design)?;
    Ok(compensated_sum(
        sample.units().iter().zip(&d).map(|(&u, w)| w * values[u]),
    ))
}

pub fn ht_totals(sample: &Sample, design: &Design, pop: &Population) -> Result<TotalsEstimate> {
    let d = expansions(sample, design)?;
    Ok(totals_with(sample, pop, &d))
}

pub fn ht_weights(sample: &Sample, design: &Design, pop: &Population) -> Result<WeightSet> {
    Ok(WeightSet {
        units: sample.units().to_vec(),
        weights: expansions(sample, design)?,
        kind: WeightKind::Ht,
        calibration_target: pop.t_x().to_vec(),
    })
}

fn expansions(sample: &Sample, design: &Design) -> Result<Vec<f64>> {
    sample
        .units()
        .iter()
        .map(|&u| {
            if u >= design.population_size() {
                return Err(Error::Argument(format!("unit {u} is outside the population")));
            }
            let d = design.expansion(u);
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::Support(format!("unit {u} has pi_i = 0")))
            }
        })
        .collect()
}

fn totals_with(sample: &Sample, pop: &Population, d: &[f64]) -> TotalsEstimate {
    let units = sample.units();
    TotalsEstimate {
        t_y_hat: compensated_sum(units.iter().zip(d).map(|(&u, w)| w * pop.unit(u).y)),
        t_x_hat: (0..pop.dim())
            .map(|k| compensated_sum(units.iter().zip(d).map(|(&u, w)| w * pop.unit(u).x[k])))
            .collect(),
    }
}

fn check_target(pop: &Population, known_t_x: &[f64]) -> Result<()> {
    if known_t_x.len() != pop.dim() {
        return Err(Error::Argument(format!(
            "known_t_x has length {}, expected {}",
            known_t_x.len(),
            pop.dim()
        )));
    }
    Ok(())
}

/// `t̂_Y − Σ_k β_k diff_k`, the single place regression estimates are formed.
fn regression_value(t_y_hat: f64, beta: &[f64], diff: &[f64]) -> f64 {
    let mut value = t_y_hat;
    for (b, d) in beta.iter().zip(diff) {
        value -= b * d;
    }
    value
}

fn difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

struct Greg {
    d: Vec<f64>,
    q: Vec<f64>,
    gram: DMatrix<f64>,
    beta: DVector<f64>,
}

fn greg_parts(sample: &Sample, design: &Design, pop: &Population, q: Option<&[f64]>) -> Result<Greg> {
    let d = expansions(sample, design)?;
    let units = sample.units();
    let q: Vec<f64> = match q {
        None => vec![1.0; units.len()],
        Some(q) => {
            if q.len() != pop.len() {
                return Err(Error::Argument(format!(
                    "q has {} entries for a population of {}",
                    q.len(),
                    pop.len()
                )));
            }
            units
                .iter()
                .map(|&u| {
                    if q[u] > 0.0 && q[u].is_finite() {
                        Ok(q[u])
                    } else {
                        Err(Error::Argument(format!(
                            "q for unit {u} must be positive, got {}",
                            q[u]
                        )))
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    let p = pop.dim();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (a, &u) in units.iter().enumerate() {
        let unit = pop.unit(u);
        let w = d[a] * q[a];
        for k in 0..p {
            rhs[k] += w * unit.y * unit.x[k];
            for l in 0..p {
                gram[(k, l)] += w * unit.x[k] * unit.x[l];
            }
        }
    }
    let beta = solve_spd(&gram, &rhs, "GREG matrix H_q")?;
    Ok(Greg { d, q, gram, beta })
}

/// `β̂ = H_q⁻¹ Σ d_i q_i y_i x_i`; `q` is indexed by unit id and defaults
/// to 1.
pub fn greg_beta_hat(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    q: Option<&[f64]>,
) -> Result<BetaEstimate> {
    let g = greg_parts(sample, design, pop, q)?;
    Ok(BetaEstimate {
        beta: g.beta.iter().copied().collect(),
        kind: BetaKind::GregBetaHat,
        null_directions: 0,
    })
}

/// Calibration weights `w_i = d_i(1 + q_i x_iᵀλ)` with
/// `λ = −H_q⁻¹(t̂_X − known_t_x)`.
pub fn greg_weights(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    q: Option<&[f64]>,
    known_t_x: &[f64],
) -> Result<WeightSet> {
    check_target(pop, known_t_x)?;
    let g = greg_parts(sample, design, pop, q)?;
    let totals = totals_with(sample, pop, &g.d);
    let gap = DVector::from_vec(difference(&totals.t_x_hat, known_t_x));
    let lambda = -solve_spd(&g.gram, &gap, "GREG matrix H_q")?;
    let weights = sample
        .units()
        .iter()
        .enumerate()
        .map(|(a, &u)| {
            let x = &pop.unit(u).x;
            let adj: f64 = x.iter().zip(lambda.iter()).map(|(xi, l)| xi * l).sum();
            g.d[a] * (1.0 + g.q[a] * adj)
        })
        .collect();
    Ok(WeightSet {
        units: sample.units().to_vec(),
        weights,
        kind: WeightKind::Greg,
        calibration_target: known_t_x.to_vec(),
    })
}

/// `t̂_Y − β̂ᵀ(t̂_X − known_t_x)`.
pub fn greg_estimate(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    q: Option<&[f64]>,
    known_t_x: &[f64],
) -> Result<f64> {
    check_target(pop, known_t_x)?;
    let g = greg_parts(sample, design, pop, q)?;
    let totals = totals_with(sample, pop, &g.d);
    let beta: Vec<f64> = g.beta.iter().copied().collect();
    Ok(regression_value(
        totals.t_y_hat,
        &beta,
        &difference(&totals.t_x_hat, known_t_x),
    ))
}

/// `t̂_Y − βᵀ(t̂_X − known_t_x)` for a fixed β.
pub fn fixed_beta_estimate(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    beta: &[f64],
    known_t_x: &[f64],
) -> Result<f64> {
    check_target(pop, known_t_x)?;
    if beta.len() != pop.dim() {
        return Err(Error::Argument(format!(
            "beta has length {}, expected {}",
            beta.len(),
            pop.dim()
        )));
    }
    let totals = ht_totals(sample, design, pop)?;
    Ok(regression_value(
        totals.t_y_hat,
        beta,
        &difference(&totals.t_x_hat, known_t_x),
    ))
}

fn solve_covariance(
    sxx: &DMatrix<f64>,
    sxy: &DVector<f64>,
    scale: f64,
    kind: BetaKind,
) -> Result<(BetaEstimate, DMatrix<f64>)> {
    let pinv = pseudo_inverse(sxx, scale)?;
    let beta = &pinv.matrix * sxy;
    Ok((
        BetaEstimate {
            beta: beta.iter().copied().collect(),
            kind,
            null_directions: pinv.null_rank,
        },
        pinv.matrix,
    ))
}

/// Exact `β₀ = Σ_{t̂X}⁻¹ Σ_{t̂X,t̂Y}` from the design covariances.
pub fn beta_o_true(design: &Design, pop: &Population) -> Result<BetaEstimate> {
    if matches!(design.spec(), DesignSpec::Nested { .. }) {
        return Err(Error::unsupported("beta_o_true", design.kind_name()));
    }
    let exact = cov_exact(design, pop)?;
    let big_n = pop.len() as f64;
    let scale = compensated_sum(pop.units().iter().map(|u| {
        let norm: f64 =
            u.x.iter()
                .zip(pop.t_x())
                .map(|(x, t)| (x - t / big_n).powi(2))
                .sum();
        norm * design.expansion(u.id)
    }));
    solve_covariance(&exact.sigma_xx, &exact.sigma_xy, scale, BetaKind::OptimalBetaTrue).map(|(b, _)| b)
}

/// Plug-in `β̂₀ = Σ̂_{t̂X}⁻¹ Σ̂_{t̂X,t̂Y}` with the pair-sum estimates at
/// constant `c`.
pub fn beta_o_hat(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    c: f64,
    known_t_x: &[f64],
) -> Result<BetaEstimate> {
    let s = pair_sums(sample, design, pop, c, known_t_x)?;
    solve_covariance(
        &s.cov.sigma_xx_hat,
        &s.cov.sigma_xy_hat,
        s.scale,
        BetaKind::OptimalBetaHat,
    )
    .map(|(b, _)| b)
}

/// Weights `w_i = d_i − g_iᵀ Σ̂_{t̂X}⁻¹ (t̂_X − known_t_x)` where `g_i` is
/// the pair-sum row of unit i, so that `Σ̂_{t̂X,t̂Y} = Σ y_i g_i`. They use
/// x and the design only, and `Σ w_i y_i` equals [`optimal_estimate`] for
/// every y. They calibrate exactly (`Σ w_i x_i = known_t_x`) when c = 1 or
/// the known totals t are zero; otherwise `Σ w_i x_i − t = −(1 − c) t (δᵀ
/// Σ̂⁻¹ δ)` with `δ = t̂_X − t`.
pub fn optimal_weights(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    c: f64,
    known_t_x: &[f64],
) -> Result<WeightSet> {
    let s = pair_sums(sample, design, pop, c, known_t_x)?;
    let (_, pinv) = solve_covariance(
        &s.cov.sigma_xx_hat,
        &s.cov.sigma_xy_hat,
        s.scale,
        BetaKind::OptimalBetaHat,
    )?;
    let totals = totals_with(sample, pop, &s.d);
    let gap = DVector::from_vec(difference(&totals.t_x_hat, known_t_x));
    let direction = &pinv * gap;
    let weights = (0..sample.len())
        .map(|a| {
            let adj: f64 = (0..pop.dim()).map(|k| s.g[(a, k)] * direction[k]).sum();
            s.d[a] - adj
        })
        .collect();
    Ok(WeightSet {
        units: sample.units().to_vec(),
        weights,
        kind: WeightKind::Optimal { c },
        calibration_target: known_t_x.to_vec(),
    })
}

/// `t̂_Y − β̂₀ᵀ(t̂_X − known_t_x)`.
pub fn optimal_estimate(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    c: f64,
    known_t_x: &[f64],
) -> Result<f64> {
    let s = pair_sums(sample, design, pop, c, known_t_x)?;
    let (beta, _) = solve_covariance(
        &s.cov.sigma_xx_hat,
        &s.cov.sigma_xy_hat,
        s.scale,
        BetaKind::OptimalBetaHat,
    )?;
    let totals = totals_with(sample, pop, &s.d);
    Ok(regression_value(
        totals.t_y_hat,
        &beta.beta,
        &difference(&totals.t_x_hat, known_t_x),
    ))
}

/// Where the covariances behind β₀₂ come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TwoSampleCovariance {
    /// Exact design covariances of both samples.
    Exact,
    /// Pair-sum estimates from each sample, with covariates centred at
    /// `centre / N`.
    PlugIn { c1: f64, c2: f64, centre: Vec<f64> },
    /// A caller-chosen β.
    Fixed { beta: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleEstimate {
    pub estimate: f64,
    pub beta: BetaEstimate,
}

/// `t̂_Y¹ − β₀₂ᵀ(t̂_X¹ − t̂_X²)` with
/// `β₀₂ = (Σ_{t̂X¹} + Σ_{t̂X²})⁻¹ Σ_{t̂X¹,t̂Y¹}`.
pub fn two_sample_estimate(
    first: (&Sample, &Design),
    second: (&Sample, &Design),
    pop: &Population,
    mode: &TwoSampleCovariance,
) -> Result<TwoSampleEstimate> {
    let (s1, d1) = first;
    let (s2, d2) = second;
    let t1 = ht_totals(s1, d1, pop)?;
    let t2 = ht_totals(s2, d2, pop)?;
    let beta = match mode {
        TwoSampleCovariance::Fixed { beta } => {
            if beta.len() != pop.dim() {
                return Err(Error::Argument(format!(
                    "beta has length {}, expected {}",
                    beta.len(),
                    pop.dim()
                )));
            }
            BetaEstimate {
                beta: beta.clone(),
                kind: BetaKind::TwoSample,
                null_directions: 0,
            }
        }
        TwoSampleCovariance::Exact => {
            let a = cov_exact(d1, pop)?;
            let b = cov_exact(d2, pop)?;
            let scale = a.sigma_xx.abs().max() + b.sigma_xx.abs().max();
            solve_covariance(
                &(a.sigma_xx + b.sigma_xx),
                &a.sigma_xy,
                scale,
                BetaKind::TwoSample,
            )?
            .0
        }
        TwoSampleCovariance::PlugIn { c1, c2, centre } => {
            let a = pair_sums(s1, d1, pop, *c1, centre)?;
            let b = pair_sums(s2, d2, pop, *c2, centre)?;
            solve_covariance(
                &(a.cov.sigma_xx_hat + b.cov.sigma_xx_hat),
                &a.cov.sigma_xy_hat,
                a.scale + b.scale,
                BetaKind::TwoSample,
            )?
            .0
        }
    };
    Ok(TwoSampleEstimate {
        estimate: regression_value(t1.t_y_hat, &beta.beta, &difference(&t1.t_x_hat, &t2.t_x_hat)),
        beta,
    })
}

/// Design covariances needed by the nested-sample estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaCovariances {
    /// `Var(δ̂_X)`, p × p.
    pub var_delta: DMatrix<f64>,
    /// `Cov(δ̂_X, t̂_Y¹)`.
    pub cov_delta_y: DVector<f64>,
    /// `Var(t̂_Y¹)` when known.
    pub var_t_y1: Option<f64>,
    /// Magnitude used to recognise a numerically null `Var(δ̂_X)`.
    pub scale: f64,
}

impl DeltaCovariances {
    pub fn new(var_delta: DMatrix<f64>, cov_delta_y: DVector<f64>) -> Self {
        let scale = var_delta.abs().max();
        Self {
            var_delta,
            cov_delta_y,
            var_t_y1: None,
            scale,
        }
    }

    /// Superpopulation covariances for `n` with-replacement draws of
    /// clusters of size K from a population of N units, one y per cluster,
    /// exchangeable x with variance σ² and correlation ρ, and
    /// `y = βx + ε` with `Var(ε) = sig_eps²`:
    ///
    /// ```text
    /// Var(δ̂_X)        = (N²/n) ((K−1)/K) (1−ρ) σ²
    /// Cov(δ̂_X, t̂_Y¹)  = (N²/n) ((K−1)/K) (1−ρ) β σ²
    /// Var(t̂_Y¹)       = (N²/n) (β² σ² + sig_eps²)
    /// ```
    pub fn example3(n: usize, big_n: usize, k: usize, rho: f64, sigma: f64, beta: f64, sig_eps: f64) -> Self {
        let base = (big_n as f64).powi(2) / n as f64;
        let shrink = (k as f64 - 1.0) / k as f64 * (1.0 - rho);
        let v = base * shrink * sigma * sigma;
        Self {
            var_delta: DMatrix::from_element(1, 1, v),
            cov_delta_y: DVector::from_element(1, v * beta),
            var_t_y1: Some(base * (beta * beta * sigma * sigma + sig_eps * sig_eps)),
            scale: base * sigma * sigma,
        }
    }

    /// Exact design covariances for a nested design with a whole-cluster
    /// outer stage and the `first` inner rule.
    pub fn exact(design: &Design, pop: &Population) -> Result<Self> {
        let DesignSpec::Nested {
            outer,
            k_measured,
            rule,
        } = design.spec()
        else {
            return Err(Error::unsupported("nested covariances", design.kind_name()));
        };
        if *rule != InnerRule::First {
            return Err(Error::unsupported(
                "exact nested covariances",
                "nested with rule=random",
            ));
        }
        let p = pop.dim();
        let big_m = design.block_count();
        // Per-cluster contribution (δ_c, y_c) before the M/n expansion.
        let rows: Vec<Vec<f64>> = (0..big_m)
            .map(|b| {
                let members = design.block_members(b);
                let f = members.len() as f64 / *k_measured as f64;
                let measured = &members[..*k_measured];
                let mut row: Vec<f64> = (0..p)
                    .map(|k| {
                        f * compensated_sum(measured.iter().map(|&i| pop.unit(i).x[k]))
                            - compensated_sum(members.iter().map(|&i| pop.unit(i).x[k]))
                    })
                    .collect();
                row.push(f * compensated_sum(measured.iter().map(|&i| pop.unit(i).y)));
                row
            })
            .collect();
        let spread = per_draw_covariance(&rows, p + 1);
        let m = big_m as f64;
        let factor = match outer.as_ref() {
            DesignSpec::ClusterWr { n } => m * m / *n as f64,
            DesignSpec::Cluster { n, .. } => {
                let n = *n as f64;
                if big_m < 2 {
                    0.0
                } else {
                    m * m / n * (1.0 - n / m) * m / (m - 1.0)
                }
            }
            other => return Err(Error::unsupported("nested covariances", other.kind_name())),
        };
        let cov = spread * factor;
        let scale =
            factor * compensated_sum(pop.units().iter().map(|u| u.x.iter().map(|x| x * x).sum::<f64>())) / m;
        Ok(Self {
            var_delta: cov.view((0, 0), (p, p)).into_owned(),
            cov_delta_y: DVector::from_fn(p, |k, _| cov[(k, p)]),
            var_t_y1: Some(cov[(p, p)]),
            scale,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub estimate: f64,
    pub t_y1_hat: f64,
    pub delta_x_hat: Vec<f64>,
    pub beta: BetaEstimate,
    /// `Var(δ̂_X)` has a null direction, so some of δ̂_X carries no
    /// usable information.
    pub degenerate: bool,
}

/// `t̂_Y¹ − β₀₃ᵀ δ̂_X` with `δ̂_X = t̂_X¹ − t̂_X²` and
/// `β₀₃ = Var(δ̂_X)⁻¹ Cov(δ̂_X, t̂_Y¹)`.
pub fn delta_estimate(
    nested: &NestedSample,
    design: &Design,
    pop: &Population,
    cov: &DeltaCovariances,
) -> Result<DeltaEstimate> {
    if !matches!(design.spec(), DesignSpec::Nested { .. }) {
        return Err(Error::unsupported("delta_estimate", design.kind_name()));
    }
    let p = pop.dim();
    if cov.var_delta.nrows() != p || cov.var_delta.ncols() != p || cov.cov_delta_y.len() != p {
        return Err(Error::Argument(format!("covariances must have dimension {p}")));
    }
    let inner: Vec<f64> = nested
        .s1
        .units()
        .iter()
        .map(|&u| design.inner_expansion(u))
        .collect::<Result<_>>()?;
    let outer = expansions(&nested.s2, design)?;
    let t1 = totals_with(&nested.s1, pop, &inner);
    let t2 = totals_with(&nested.s2, pop, &outer);
    let delta = difference(&t1.t_x_hat, &t2.t_x_hat);
    let (beta, _) = solve_covariance(&cov.var_delta, &cov.cov_delta_y, cov.scale, BetaKind::Delta)?;
    Ok(DeltaEstimate {
        estimate: regression_value(t1.t_y_hat, &beta.beta, &delta),
        t_y1_hat: t1.t_y_hat,
        delta_x_hat: delta,
        degenerate: beta.null_directions > 0,
        beta,
    })
}

/// Full-population least squares `argmin_b Σ_U (y_i − bᵀx_i)²`.
pub fn ols_beta_population(pop: &Population) -> Result<BetaEstimate> {
    let p = pop.dim();
    let gram = DMatrix::from_fn(p, p, |k, l| {
        compensated_sum(pop.units().iter().map(|u| u.x[k] * u.x[l]))
    });
    let rhs = DVector::from_fn(p, |k, _| {
        compensated_sum(pop.units().iter().map(|u| u.x[k] * u.y))
    });
    let beta = solve_spd(&gram, &rhs, "population Gram matrix")?;
    Ok(BetaEstimate {
        beta: beta.iter().copied().collect(),
        kind: BetaKind::OlsPopulation,
        null_directions: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::Unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pop(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Population {
        let units = (0..n)
            .map(|id| Unit {
                id,
                y: rng.random_range(-5.0..5.0),
                x: (0..p).map(|_| rng.random_range(-3.0..3.0)).collect(),
                stratum: Some((id % 3) as u32),
                cluster: Some((id / 4) as u32),
            })
            .collect();
        Population::new(units).unwrap()
    }

    fn srswor(pop: &Population, n: usize, seed: u64) -> (Design, Sample) {
        let d = Design::new(DesignSpec::Srswor { n }, pop).unwrap();
        let s = d.draw(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (d, s)
    }

    #[test]
    fn census_ht_is_the_total() {
        let pop = Population::from_columns(&[1.0, 2.0, 3.5], &[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let d = Design::new(DesignSpec::Census, &pop).unwrap();
        let s = d.draw(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ht_total(&s, &d, &pop.y_values()).unwrap(), 6.5);
        assert_eq!(ht_total(&s, &d, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(greg_estimate(&s, &d, &pop, None, pop.t_x()).unwrap(), 6.5);
    }

    #[test]
    fn intercept_only_greg_is_a_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..10.0)).collect();
        let pop = Population::from_columns(&y, &vec![vec![1.0]; 30]).unwrap();
        let (d, s) = srswor(&pop, 9, 1);
        let b = greg_beta_hat(&s, &d, &pop, None).unwrap();
        let t = ht_totals(&s, &d, &pop).unwrap();
        assert!((b.beta[0] - t.t_y_hat / t.t_x_hat[0]).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coef = [1.5, -0.25];
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..4.0)])
            .collect();
        let y: Vec<f64> = x.iter().map(|x| coef[0] * x[0] + coef[1] * x[1]).collect();
        let pop = Population::from_columns(&y, &x).unwrap();
        let (d, s) = srswor(&pop, 15, 2);
        let b = greg_beta_hat(&s, &d, &pop, None).unwrap();
        assert!((b.beta[0] - coef[0]).abs() < 1e-10 && (b.beta[1] - coef[1]).abs() < 1e-10);
        let est = greg_estimate(&s, &d, &pop, None, pop.t_x()).unwrap();
        assert!((est - pop.t_y()).abs() < 1e-9 * pop.t_y().abs().max(1.0));
        let ols = ols_beta_population(&pop).unwrap();
        assert!((ols.beta[0] - coef[0]).abs() < 1e-12);
        let b0 = beta_o_true(&d, &pop).unwrap();
        assert!((b0.beta[0] - coef[0]).abs() < 1e-9 && (b0.beta[1] - coef[1]).abs() < 1e-9);
    }

    #[test]
    fn greg_weights_without_gap_are_design_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pop = random_pop(&mut rng, 20, 2);
        let (d, s) = srswor(&pop, 6, 3);
        let t = ht_totals(&s, &d, &pop).unwrap();
        let w = greg_weights(&s, &d, &pop, None, &t.t_x_hat).unwrap();
        for (a, &u) in s.units().iter().enumerate() {
            assert_eq!(w.weights[a], d.expansion(u));
        }
    }

    #[test]
    fn greg_weights_calibrate_and_match_beta_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rep in 0..50 {
            let pop = random_pop(&mut rng, 30, 3);
            let (d, s) = srswor(&pop, 12, rep);
            let q: Vec<f64> = (0..30).map(|_| rng.random_range(0.5..2.0)).collect();
            let w = greg_weights(&s, &d, &pop, Some(&q), pop.t_x()).unwrap();
            for r in w.calibration_residual(&pop) {
                assert!(r.abs() < 1e-9);
            }
            let direct = w.estimate(&pop.y_values());
            let beta_form = greg_estimate(&s, &d, &pop, Some(&q), pop.t_x()).unwrap();
            assert!((direct - beta_form).abs() < 1e-9 * beta_form.abs().max(1.0));
        }
    }

    #[test]
    fn greg_rejects_singular_gram() {
        let pop = Population::from_columns(&[1.0, 2.0, 3.0, 4.0], &vec![vec![1.0, 2.0]; 4]).unwrap();
        let (d, s) = srswor(&pop, 3, 0);
        assert!(matches!(
            greg_beta_hat(&s, &d, &pop, None),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn optimal_weights_ignore_y_and_reproduce_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pop = random_pop(&mut rng, 25, 2);
        let (d, s) = srswor(&pop, 10, 5);
        let centre = vec![0.0; 2];
        let w1 = optimal_weights(&s, &d, &pop, 0.7, &centre).unwrap();
        let other: Vec<Unit> = pop
            .units()
            .iter()
            .map(|u| Unit {
                y: u.y * 3.0 - 1.0,
                ..u.clone()
            })
            .collect();
        let pop2 = Population::new(other).unwrap();
        let w2 = optimal_weights(&s, &d, &pop2, 0.7, &centre).unwrap();
        assert_eq!(w1.weights, w2.weights);
        for p in [&pop, &pop2] {
            let est = optimal_estimate(&s, &d, p, 0.7, &centre).unwrap();
            let via_w = w1.estimate(&p.y_values());
            assert!((est - via_w).abs() < 1e-9 * est.abs().max(1.0));
        }
    }

    #[test]
    fn zero_covariates_leave_design_weights() {
        let pop = Population::from_columns(&[1.0, 5.0, 2.0, 7.0, 3.0], &vec![vec![0.0]; 5]).unwrap();
        let (d, s) = srswor(&pop, 3, 1);
        let w = optimal_weights(&s, &d, &pop, 1.0, &[0.0]).unwrap();
        assert!(w.weights.iter().all(|&x| x == 5.0 / 3.0));
        let b = beta_o_hat(&s, &d, &pop, 1.0, &[0.0]).unwrap();
        assert_eq!(b.null_directions, 1);
        assert_eq!(b.beta, vec![0.0]);
    }

    #[test]
    fn y_equal_x_gives_unit_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..3.0)).collect();
        let pop = Population::from_columns(&x, &x.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let (d, s) = srswor(&pop, 5, 2);
        let b = beta_o_hat(&s, &d, &pop, 1.0, pop.t_x()).unwrap();
        assert!((b.beta[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_sample_with_forced_zero_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pop = random_pop(&mut rng, 20, 1);
        let (d1, s1) = srswor(&pop, 5, 1);
        let (d2, s2) = srswor(&pop, 8, 2);
        let r = two_sample_estimate(
            (&s1, &d1),
            (&s2, &d2),
            &pop,
            &TwoSampleCovariance::Fixed { beta: vec![0.0] },
        )
        .unwrap();
        assert_eq!(r.estimate, ht_totals(&s1, &d1, &pop).unwrap().t_y_hat);
    }

    #[test]
    fn two_sample_with_census_matches_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pop = random_pop(&mut rng, 30, 2);
        let (d1, s1) = srswor(&pop, 10, 4);
        let census = Design::new(DesignSpec::Census, &pop).unwrap();
        let all = census.draw(&mut rng).unwrap();
        let mode = TwoSampleCovariance::PlugIn {
            c1: 1.0,
            c2: 1.0,
            centre: pop.t_x().to_vec(),
        };
        let two = two_sample_estimate((&s1, &d1), (&all, &census), &pop, &mode).unwrap();
        let one = optimal_estimate(&s1, &d1, &pop, 1.0, pop.t_x()).unwrap();
        assert_eq!(two.estimate.to_bits(), one.to_bits());
        let exact =
            two_sample_estimate((&s1, &d1), (&all, &census), &pop, &TwoSampleCovariance::Exact).unwrap();
        let b0 = beta_o_true(&d1, &pop).unwrap();
        assert_eq!(exact.beta.beta, b0.beta);
    }

    #[test]
    fn delta_with_single_unit_clusters_is_plain_expansion() {
        let units = (0..20)
            .map(|id| Unit {
                id,
                y: id as f64,
                x: vec![(id as f64).cos()],
                stratum: None,
                cluster: Some(id as u32),
            })
            .collect();
        let pop = Population::new(units).unwrap();
        let d = Design::new(DesignSpec::parse("cluster_wr(n=5, k_measured=1)").unwrap(), &pop).unwrap();
        let s = d.draw_nested(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let cov = DeltaCovariances::exact(&d, &pop).unwrap();
        let r = delta_estimate(&s, &d, &pop, &cov).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.estimate, r.t_y1_hat);
        assert_eq!(r.delta_x_hat, vec![0.0]);
    }

    #[test]
    fn perfectly_correlated_clusters_are_degenerate() {
        let cov = DeltaCovariances::example3(10, 400, 4, 1.0, 1.0, 2.0, 0.0);
        assert_eq!(cov.var_delta[(0, 0)], 0.0);
        let units = (0..16)
            .map(|id| Unit {
                id,
                y: 1.0,
                x: vec![1.0],
                stratum: None,
                cluster: Some((id / 4) as u32),
            })
            .collect();
        let pop = Population::new(units).unwrap();
        let d = Design::new(DesignSpec::parse("cluster_wr(n=2, k_measured=1)").unwrap(), &pop).unwrap();
        let s = d.draw_nested(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = delta_estimate(&s, &d, &pop, &cov).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.estimate, r.t_y1_hat);
    }

    #[test]
    fn orthogonal_columns_give_coordinate_ratios() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 0.0], vec![0.0, -2.0]];
        let y = [3.0, 4.0, -1.0, 1.0];
        let pop = Population::from_columns(&y, &x).unwrap();
        let b = ols_beta_population(&pop).unwrap();
        assert!((b.beta[0] - 4.0 / 2.0).abs() < 1e-15);
        assert!((b.beta[1] - 6.0 / 8.0).abs() < 1e-15);
    }
}
