//! Design-based covariance of Horvitz-Thompson totals.
//!
//! [`cov_hat`] is the unbiased pair-sum estimator with a free constant `c`:
//!
//! ```text
//! Σ̂_{t̂X,t̂Y} = Σ_{i,j∈S} (1/π_ij)(π_ij/(π_i π_j) − c) y_i x_j
//! Σ̂_{t̂X}    = Σ_{i,j∈S} (1/π_ij)(π_ij/(π_i π_j) − c) x_i x_jᵀ
//! ```
//!
//! Its expectation is the true covariance for every `c` only when the
//! covariate total is zero, so covariates are centred by `known_t_x / N`
//! first. Designs whose expanded count `N̂ = Σ_S d_i` varies from sample to
//! sample (unequal clusters, nested designs) also get a correction term so
//! the result stays unbiased for every `c`. The pair sum factors as `t̂ t̂ᵀ − c Σ_{i,j} u_i v_jᵀ / π_ij`; the
//! second term is evaluated per sampled unit as a row sum
//! `r_i = Σ_j v_j / π_ij`, either directly in O(n²) or in O(n) through the
//! design's [`BlockStructure`].
//!
//! [`cov_exact`] returns the exact design covariances from population-level
//! double sums of `(π_ij/(π_i π_j) − 1)`.

use nalgebra::{DMatrix, DVector};

use crate::design::{Design, DesignSpec, Sample};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, symmetrize, CompensatedSum};
use crate::population::Population;

#[derive(Clone, Debug, PartialEq)]
pub struct CovEstimate {
    pub sigma_xx_hat: DMatrix<f64>,
    pub sigma_xy_hat: DVector<f64>,
    pub c_used: f64,
}

/// Exact design covariances of the HT totals.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactCovariance {
    pub sigma_xx: DMatrix<f64>,
    pub sigma_xy: DVector<f64>,
    pub var_y: f64,
}

/// The constant that zeroes the off-diagonal pair terms for SRSWOR,
/// `(n−1)N / (n(N−1))`; 1 for every other design.
pub fn recommended_c(design: &Design) -> f64 {
    match design.spec() {
        DesignSpec::Srswor { n } => {
            let big_n = design.population_size();
            if big_n < 2 {
                return 1.0;
            }
            (*n as f64 - 1.0) * big_n as f64 / (*n as f64 * (big_n as f64 - 1.0))
        }
        _ => 1.0,
    }
}

/// Coefficient `(1/π_ij)(π_ij/(π_i π_j) − c)` of the (i, j) pair term.
pub fn pair_coefficient(design: &Design, i: usize, j: usize, c: f64) -> Result<f64> {
    let pij = design.pi_joint(i, j)?;
    if pij <= 0.0 {
        return Err(Error::Support(format!(
            "units {i} and {j} are never sampled together (pi_ij = 0)"
        )));
    }
    Ok(1.0 / (design.pi_first(i) * design.pi_first(j)) - c / pij)
}

fn require_without_replacement(design: &Design, op: &str) -> Result<()> {
    if design.is_with_replacement() || matches!(design.spec(), DesignSpec::Nested { .. }) {
        return Err(Error::unsupported(op, design.kind_name()));
    }
    Ok(())
}

/// Row sums `r_i = Σ_{j∈S} v_j / π_ij` over sampled units, one row of `v`
/// per sample position. O(n²) evaluation through `pi_joint`.
pub fn inverse_joint_rows_direct(sample: &Sample, design: &Design, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_without_replacement(design, "inverse_joint_rows")?;
    let units = sample.units();
    let mut out = DMatrix::<f64>::zeros(v.nrows(), v.ncols());
    for (a, &i) in units.iter().enumerate() {
        for (b, &j) in units.iter().enumerate() {
            let pij = design.pi_joint(i, j)?;
            if pij <= 0.0 {
                return Err(Error::Support(format!(
                    "sampled units {i} and {j} have pi_ij = 0"
                )));
            }
            for k in 0..v.ncols() {
                out[(a, k)] += v[(b, k)] / pij;
            }
        }
    }
    Ok(out)
}

/// Same row sums in O(n) using the design's block decomposition. Falls back
/// to [`inverse_joint_rows_direct`] when the design has none.
pub fn inverse_joint_rows(sample: &Sample, design: &Design, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_without_replacement(design, "inverse_joint_rows")?;
    let Some(bs) = design.block_structure() else {
        return inverse_joint_rows_direct(sample, design, v);
    };
    let units = sample.units();
    let p = v.ncols();
    let blocks = bs.pi.len();
    let mut block_sum = DMatrix::<f64>::zeros(blocks, p);
    let mut block_count = vec![0usize; blocks];
    for (a, &i) in units.iter().enumerate() {
        let b = bs.block_of[i];
        block_count[b] += 1;
        for k in 0..p {
            block_sum[(b, k)] += v[(a, k)];
        }
    }
    let present = block_count.iter().filter(|&&c| c > 0).count();
    for (b, &cnt) in block_count.iter().enumerate() {
        if cnt > 1 && bs.pi_within[b] <= 0.0 {
            return Err(Error::Support(format!(
                "block {b} holds {cnt} sampled units but its pairs have pi_ij = 0"
            )));
        }
    }
    let use_cross = present > 1;
    if use_cross && bs.cross <= 0.0 {
        return Err(Error::Support(
            "sample spans blocks that are never sampled together".into(),
        ));
    }
    // W = Σ_b V_b / π_b, used by the separable cross-block term.
    let mut weighted_total = vec![0.0; p];
    if use_cross {
        for b in 0..blocks {
            if block_count[b] > 0 {
                for (k, w) in weighted_total.iter_mut().enumerate() {
                    *w += block_sum[(b, k)] / bs.pi[b];
                }
            }
        }
    }
    let mut out = DMatrix::<f64>::zeros(v.nrows(), p);
    for (a, &i) in units.iter().enumerate() {
        let b = bs.block_of[i];
        let pi = bs.pi[b];
        for k in 0..p {
            let own = v[(a, k)];
            let mut r = own / pi;
            if block_count[b] > 1 {
                r += (block_sum[(b, k)] - own) / bs.pi_within[b];
            }
            if use_cross {
                r += (weighted_total[k] - block_sum[(b, k)] / pi) / (bs.cross * pi);
            }
            out[(a, k)] = r;
        }
    }
    Ok(out)
}

/// Per-sample ingredients shared by [`cov_hat`] and the optimal estimator.
#[derive(Clone, Debug)]
pub(crate) struct PairSums {
    /// Design weights d_i = 1/π_i per sample position.
    pub d: Vec<f64>,
    /// `g_i = Σ_j (1/π_ij)(π_ij/(π_iπ_j) − c) x'_j`, one row per position,
    /// with a count correction on designs where Σ d_i varies.
    pub g: DMatrix<f64>,
    pub cov: CovEstimate,
    /// Magnitude of the assembled terms, for null-direction detection.
    pub scale: f64,
}

pub(crate) fn pair_sums(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    c: f64,
    known_t_x: &[f64],
) -> Result<PairSums> {
    require_without_replacement(design, "cov_hat")?;
    let p = pop.dim();
    if known_t_x.len() != p {
        return Err(Error::Argument(format!(
            "known_t_x has length {}, expected {p}",
            known_t_x.len()
        )));
    }
    let units = sample.units();
    let n = units.len();
    let mut d = Vec::with_capacity(n);
    for &u in units {
        let pi = design.pi_first(u);
        if pi <= 0.0 {
            return Err(Error::Support(format!("unit {u} has pi_i = 0")));
        }
        d.push(1.0 / pi);
    }
    if design.is_census() {
        return Ok(PairSums {
            d,
            g: DMatrix::<f64>::zeros(n, p),
            cov: CovEstimate {
                sigma_xx_hat: DMatrix::<f64>::zeros(p, p),
                sigma_xy_hat: DVector::<f64>::zeros(p),
                c_used: c,
            },
            scale: 0.0,
        });
    }
    let big_n = pop.len() as f64;
    let shift: Vec<f64> = known_t_x.iter().map(|t| t / big_n).collect();
    let xc = DMatrix::from_fn(n, p, |a, k| pop.unit(units[a]).x[k] - shift[k]);
    let t_hat: Vec<f64> = (0..p)
        .map(|k| compensated_sum((0..n).map(|a| d[a] * xc[(a, k)])))
        .collect();
    let rows = inverse_joint_rows(sample, design, &xc)?;
    let mut g = DMatrix::from_fn(n, p, |a, k| d[a] * t_hat[k] - c * rows[(a, k)]);
    // When the expanded count N̂ varies, centring alone no longer removes the
    // (1 − c) t tᵀ term; h_j = g_j + (t/N) κ_j restores unbiasedness.
    let varying = !design.has_fixed_count();
    if varying {
        let ones = DMatrix::from_element(n, 1, 1.0);
        let s = inverse_joint_rows(sample, design, &ones)?;
        let n_hat = compensated_sum(d.iter().copied());
        for a in 0..n {
            let kappa = d[a] * (n_hat - big_n) - c * (s[(a, 0)] - big_n * d[a]);
            for k in 0..p {
                g[(a, k)] += shift[k] * kappa;
            }
        }
    }

    let mut sxx = DMatrix::<f64>::zeros(p, p);
    let mut sxy = DVector::<f64>::zeros(p);
    let mut scale = 0.0;
    for a in 0..n {
        let y = pop.unit(units[a]).y;
        for k in 0..p {
            sxy[k] += y * g[(a, k)];
            for l in 0..p {
                sxx[(k, l)] += xc[(a, k)] * g[(a, l)];
            }
            scale += (d[a] * xc[(a, k)]).powi(2);
        }
    }
    if varying {
        // Σ x hᵀ − (1 − c) t (t̂_X − t)ᵀ written in centred covariates.
        for l in 0..p {
            let h_sum = compensated_sum((0..n).map(|a| g[(a, l)]));
            let gap = t_hat[l] + shift[l] * (compensated_sum(d.iter().copied()) - big_n);
            for k in 0..p {
                sxx[(k, l)] += shift[k] * h_sum - (1.0 - c) * known_t_x[k] * gap;
            }
        }
    }
    symmetrize(&mut sxx);
    Ok(PairSums {
        d,
        g,
        cov: CovEstimate {
            sigma_xx_hat: sxx,
            sigma_xy_hat: sxy,
            c_used: c,
        },
        scale: scale * c.abs().max(1.0),
    })
}

/// Unbiased plug-in estimates of `Var(t̂_X)` and `Cov(t̂_X, t̂_Y)` from one
/// without-replacement sample.
pub fn cov_hat(
    sample: &Sample,
    design: &Design,
    pop: &Population,
    c: f64,
    known_t_x: &[f64],
) -> Result<CovEstimate> {
    pair_sums(sample, design, pop, c, known_t_x).map(|s| s.cov)
}

/// Exact `Var(t̂_X)`, `Cov(t̂_X, t̂_Y)` and `Var(t̂_Y)` under the design.
pub fn cov_exact(design: &Design, pop: &Population) -> Result<ExactCovariance> {
    let p = pop.dim();
    if design.is_census() {
        return Ok(ExactCovariance {
            sigma_xx: DMatrix::<f64>::zeros(p, p),
            sigma_xy: DVector::<f64>::zeros(p),
            var_y: 0.0,
        });
    }
    if let DesignSpec::ClusterWr { n } = design.spec() {
        return Ok(cluster_wr_exact(design, pop, *n));
    }
    require_without_replacement(design, "cov_exact")?;
    let bs = design
        .block_structure()
        .expect("every without-replacement design has a block structure");
    let blocks = bs.pi.len();
    // Augment covariates with y as the last column so one pass serves all.
    let q = p + 1;
    let value = |id: usize, k: usize| -> f64 {
        let u = pop.unit(id);
        if k < p {
            u.x[k]
        } else {
            u.y
        }
    };
    let mut diag = vec![DMatrix::<f64>::zeros(q, q); blocks];
    let mut totals = DMatrix::<f64>::zeros(blocks, q);
    for b in 0..blocks {
        let members = design.block_members(b);
        for k in 0..q {
            totals[(b, k)] = compensated_sum(members.iter().map(|&i| value(i, k)));
            for l in 0..q {
                diag[b][(k, l)] = compensated_sum(members.iter().map(|&i| value(i, k) * value(i, l)));
            }
        }
    }
    let mut out = DMatrix::<f64>::zeros(q, q);
    for k in 0..q {
        for l in 0..q {
            let mut acc = CompensatedSum::new();
            let mut grand_k = CompensatedSum::new();
            let mut grand_l = CompensatedSum::new();
            let mut block_products = CompensatedSum::new();
            for b in 0..blocks {
                let pi = bs.pi[b];
                let within = bs.pi_within[b] / (pi * pi) - 1.0;
                let single = 1.0 / pi - 1.0;
                let (tk, tl) = (totals[(b, k)], totals[(b, l)]);
                acc.add((single - within) * diag[b][(k, l)]);
                acc.add(within * tk * tl);
                grand_k.add(tk);
                grand_l.add(tl);
                block_products.add(tk * tl);
            }
            if blocks > 1 {
                let cross = bs.cross - 1.0;
                acc.add(cross * grand_k.value() * grand_l.value());
                acc.add(-cross * block_products.value());
            }
            out[(k, l)] = acc.value();
        }
    }
    symmetrize(&mut out);
    Ok(ExactCovariance {
        sigma_xx: out.view((0, 0), (p, p)).into_owned(),
        sigma_xy: DVector::from_fn(p, |k, _| out[(k, p)]),
        var_y: out[(p, p)],
    })
}

/// n independent uniform cluster draws: the HT total is the mean of n iid
/// copies of `M * (cluster total)`.
fn cluster_wr_exact(design: &Design, pop: &Population, n: usize) -> ExactCovariance {
    let p = pop.dim();
    let big_m = design.block_count();
    let q = p + 1;
    let contrib: Vec<Vec<f64>> = (0..big_m)
        .map(|b| {
            let members = design.block_members(b);
            (0..q)
                .map(|k| {
                    big_m as f64
                        * compensated_sum(members.iter().map(|&i| {
                            let u = pop.unit(i);
                            if k < p {
                                u.x[k]
                            } else {
                                u.y
                            }
                        }))
                })
                .collect()
        })
        .collect();
    let out = per_draw_covariance(&contrib, q) / n as f64;
    ExactCovariance {
        sigma_xx: out.view((0, 0), (p, p)).into_owned(),
        sigma_xy: DVector::from_fn(p, |k, _| out[(k, p)]),
        var_y: out[(p, p)],
    }
}

/// Population covariance (divisor = number of rows) of row vectors.
pub(crate) fn per_draw_covariance(rows: &[Vec<f64>], q: usize) -> DMatrix<f64> {
    let m = rows.len() as f64;
    let mean: Vec<f64> = (0..q)
        .map(|k| compensated_sum(rows.iter().map(|r| r[k])) / m)
        .collect();
    let mut out = DMatrix::<f64>::zeros(q, q);
    for k in 0..q {
        for l in 0..q {
            out[(k, l)] = compensated_sum(rows.iter().map(|r| (r[k] - mean[k]) * (r[l] - mean[l]))) / m;
        }
    }
    out
}

/// O(N²) evaluation of the exact covariance identity straight from
/// `pi_joint`, for cross-checking [`cov_exact`] on small populations.
pub fn cov_exact_direct(design: &Design, pop: &Population) -> Result<ExactCovariance> {
    require_without_replacement(design, "cov_exact_direct")?;
    let p = pop.dim();
    let n = pop.len();
    let mut sxx = DMatrix::<f64>::zeros(p, p);
    let mut sxy = DVector::<f64>::zeros(p);
    let mut var_y = 0.0;
    for i in 0..n {
        for j in 0..n {
            let coef = design.pi_joint(i, j)? / (design.pi_first(i) * design.pi_first(j)) - 1.0;
            let (ui, uj) = (pop.unit(i), pop.unit(j));
            var_y += coef * ui.y * uj.y;
            for k in 0..p {
                sxy[k] += coef * uj.y * ui.x[k];
                for l in 0..p {
                    sxx[(k, l)] += coef * ui.x[k] * uj.x[l];
                }
            }
        }
    }
    Ok(ExactCovariance {
        sigma_xx: sxx,
        sigma_xy: sxy,
        var_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignSpec;
    use crate::population::Unit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pop(n: usize, p: usize, stratum: impl Fn(usize) -> u32, cluster: impl Fn(usize) -> u32) -> Population {
        let units = (0..n)
            .map(|id| Unit {
                id,
                y: 1.0 + (id as f64 * 0.37).cos() * 3.0,
                x: (0..p)
                    .map(|k| ((id * (k + 2)) as f64 * 0.61).sin() + k as f64)
                    .collect(),
                stratum: Some(stratum(id)),
                cluster: Some(cluster(id)),
            })
            .collect();
        Population::new(units).unwrap()
    }

    #[test]
    fn recommended_constants() {
        let p6 = pop(6, 1, |_| 0, |_| 0);
        let d = Design::new(DesignSpec::Srswor { n: 3 }, &p6).unwrap();
        assert_eq!(recommended_c(&d), 2.0 * 6.0 / (3.0 * 5.0));
        assert!((recommended_c(&d) - 0.8).abs() < 1e-15);
        let d = Design::new(DesignSpec::Srswor { n: 6 }, &p6).unwrap();
        assert_eq!(recommended_c(&d), 1.0);
        let ps = pop(6, 1, |i| (i % 2) as u32, |_| 0);
        let d = Design::new(DesignSpec::Stratified { n: vec![2, 2] }, &ps).unwrap();
        assert_eq!(recommended_c(&d), 1.0);
    }

    #[test]
    fn srswor_recommended_c_leaves_only_diagonal() {
        let p6 = pop(6, 1, |_| 0, |_| 0);
        let d = Design::new(DesignSpec::Srswor { n: 3 }, &p6).unwrap();
        let c = recommended_c(&d);
        for i in 0..6 {
            for j in 0..6 {
                let coef = pair_coefficient(&d, i, j, c).unwrap();
                if i != j {
                    assert!(coef.abs() < 1e-14, "{i},{j}: {coef}");
                } else {
                    assert!(coef.abs() > 0.1);
                }
            }
        }
    }

    #[test]
    fn blocked_rows_match_direct_rows() {
        let specs = [
            (DesignSpec::Srswor { n: 5 }, pop(12, 2, |_| 0, |_| 0)),
            (
                DesignSpec::Stratified { n: vec![2, 3, 1] },
                pop(12, 2, |i| (i % 3) as u32, |_| 0),
            ),
            (
                DesignSpec::Cluster { n: 3, m: None },
                pop(12, 2, |_| 0, |i| (i / 3) as u32),
            ),
            (
                DesignSpec::Cluster { n: 2, m: Some(2) },
                pop(14, 2, |_| 0, |i| if i < 5 { 0 } else { 1 + (i as u32 - 5) / 3 }),
            ),
            (
                DesignSpec::Cluster { n: 1, m: None },
                pop(12, 2, |_| 0, |i| (i / 3) as u32),
            ),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (spec, pop) in specs {
            let d = Design::new(spec.clone(), &pop).unwrap();
            for _ in 0..20 {
                let s = d.draw(&mut rng).unwrap();
                let v = DMatrix::from_fn(s.len(), 2, |a, k| pop.unit(s.units()[a]).x[k] * 1.7 - 0.3);
                let fast = inverse_joint_rows(&s, &d, &v).unwrap();
                let slow = inverse_joint_rows_direct(&s, &d, &v).unwrap();
                let err = (&fast - &slow).abs().max();
                assert!(err <= 1e-11 * slow.abs().max().max(1.0), "{spec}: {err}");
            }
        }
    }

    #[test]
    fn zero_covariates_give_zero_estimates() {
        let units = (0..6)
            .map(|id| Unit {
                id,
                y: id as f64,
                x: vec![0.0, 0.0],
                stratum: None,
                cluster: None,
            })
            .collect();
        let p0 = Population::new(units).unwrap();
        let d = Design::new(DesignSpec::Srswor { n: 3 }, &p0).unwrap();
        let s = d.draw(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let est = cov_hat(&s, &d, &p0, 0.5, &[0.0, 0.0]).unwrap();
        assert_eq!(est.sigma_xx_hat, DMatrix::<f64>::zeros(2, 2));
        assert_eq!(est.sigma_xy_hat, DVector::<f64>::zeros(2));
    }

    #[test]
    fn estimates_differ_across_c_on_some_sample() {
        let p8 = pop(8, 1, |_| 0, |_| 0);
        let d = Design::new(DesignSpec::Srswor { n: 4 }, &p8).unwrap();
        let t = p8.t_x().to_vec();
        let differs = d.enumerate_samples(1000).unwrap().any(|(s, _)| {
            let a = cov_hat(&s, &d, &p8, 0.0, &t).unwrap();
            let b = cov_hat(&s, &d, &p8, 1.0, &t).unwrap();
            (a.sigma_xx_hat[(0, 0)] - b.sigma_xx_hat[(0, 0)]).abs() > 1e-9
        });
        assert!(differs);
    }

    #[test]
    fn symmetric_estimate() {
        let p9 = pop(9, 3, |_| 0, |_| 0);
        let d = Design::new(DesignSpec::Srswor { n: 5 }, &p9).unwrap();
        let s = d.draw(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let est = cov_hat(&s, &d, &p9, 0.3, p9.t_x()).unwrap();
        assert_eq!(est.sigma_xx_hat, est.sigma_xx_hat.transpose());
        assert_eq!(est.c_used, 0.3);
    }

    #[test]
    fn exact_blocked_matches_direct() {
        let specs = [
            (DesignSpec::Srswor { n: 5 }, pop(12, 2, |_| 0, |_| 0)),
            (
                DesignSpec::Stratified { n: vec![2, 3, 1] },
                pop(12, 2, |i| (i % 3) as u32, |_| 0),
            ),
            (
                DesignSpec::Cluster { n: 3, m: None },
                pop(12, 2, |_| 0, |i| (i / 3) as u32),
            ),
            (
                DesignSpec::Cluster { n: 2, m: Some(2) },
                pop(14, 2, |_| 0, |i| if i < 5 { 0 } else { 1 + (i as u32 - 5) / 3 }),
            ),
        ];
        for (spec, pop) in specs {
            let d = Design::new(spec.clone(), &pop).unwrap();
            let a = cov_exact(&d, &pop).unwrap();
            let b = cov_exact_direct(&d, &pop).unwrap();
            let tol = 1e-10 * b.sigma_xx.abs().max().max(1.0);
            assert!((&a.sigma_xx - &b.sigma_xx).abs().max() < tol, "{spec}");
            assert!((&a.sigma_xy - &b.sigma_xy).abs().max() < tol, "{spec}");
            assert!(
                (a.var_y - b.var_y).abs() < 1e-10 * b.var_y.abs().max(1.0),
                "{spec}"
            );
        }
    }

    #[test]
    fn census_has_no_variance() {
        let p6 = pop(6, 2, |_| 0, |_| 0);
        let d = Design::new(DesignSpec::Census, &p6).unwrap();
        let e = cov_exact(&d, &p6).unwrap();
        assert_eq!(e.var_y, 0.0);
        assert_eq!(e.sigma_xx, DMatrix::<f64>::zeros(2, 2));
    }

    #[test]
    fn with_replacement_is_unsupported_for_plug_in() {
        let p = pop(6, 1, |_| 0, |i| (i / 2) as u32);
        let d = Design::new(DesignSpec::ClusterWr { n: 2 }, &p).unwrap();
        let s = d.draw(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(
            cov_hat(&s, &d, &p, 1.0, p.t_x()),
            Err(Error::Unsupported { .. })
        ));
    }
}
