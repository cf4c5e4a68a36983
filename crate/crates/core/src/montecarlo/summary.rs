//! Moments of replicated statistics and their Monte Carlo standard errors.

use serde::{Deserialize, Serialize};

use crate::numeric::compensated_sum;

/// Serialises NaN as `null` so undefined moments survive a JSON round trip.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub name: String,
    /// Replications (or enumerated samples) with a finite value.
    pub count: usize,
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    /// Divisor R − 1 in Monte Carlo mode; exact in enumerate mode.
    #[serde(with = "nan_as_null")]
    pub variance: f64,
    #[serde(with = "nan_as_null")]
    pub mean_se: f64,
    #[serde(with = "nan_as_null")]
    pub variance_se: f64,
    pub target: Option<f64>,
    pub bias: Option<f64>,
    pub mse: Option<f64>,
    /// Enumerate mode only: |mean − target| <= 1e-10 max(1, |target|).
    pub unbiased: Option<bool>,
    pub distribution: Option<Distribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub numerator: String,
    pub denominator: String,
    #[serde(with = "nan_as_null")]
    pub ratio: f64,
    #[serde(with = "nan_as_null")]
    pub se: f64,
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub first: String,
    pub second: String,
    #[serde(with = "nan_as_null")]
    pub covariance: f64,
    #[serde(with = "nan_as_null")]
    pub se: f64,
    pub target: Option<f64>,
}

pub(crate) const UNBIASED_TOLERANCE: f64 = 1e-10;

/// Values paired with probabilities (enumeration) or equal weights (MC).
pub(crate) enum Weighting<'a> {
    Equal,
    Probabilities(&'a [f64]),
}

fn finite_pairs<'a>(values: &'a [f64], w: &'a Weighting<'a>) -> Vec<(f64, f64)> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, &v)| match w {
            Weighting::Equal => (v, 1.0),
            Weighting::Probabilities(p) => (v, p[i]),
        })
        .collect()
}

pub(crate) fn summarize_series(
    name: &str,
    values: &[f64],
    target: Option<f64>,
    weighting: &Weighting<'_>,
) -> SeriesSummary {
    let pairs = finite_pairs(values, weighting);
    let count = pairs.len();
    let exact = matches!(weighting, Weighting::Probabilities(_));
    let (mean, variance, mean_se, variance_se, mse) = if exact {
        let total = compensated_sum(pairs.iter().map(|(_, p)| *p));
        let mean = shifted_mean(pairs.iter().map(|(v, p)| (*v, *p)), total);
        let var = compensated_sum(pairs.iter().map(|(v, p)| p * (v - mean).powi(2))) / total;
        let mse = target.map(|t| compensated_sum(pairs.iter().map(|(v, p)| p * (v - t).powi(2))) / total);
        (mean, var, 0.0, 0.0, mse)
    } else if count == 0 {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN, None)
    } else {
        let r = count as f64;
        let mean = compensated_sum(pairs.iter().map(|(v, _)| *v)) / r;
        let m2 = compensated_sum(pairs.iter().map(|(v, _)| (v - mean).powi(2))) / r;
        let m4 = compensated_sum(pairs.iter().map(|(v, _)| (v - mean).powi(4))) / r;
        let var = if count > 1 { m2 * r / (r - 1.0) } else { f64::NAN };
        let mse = target.map(|t| compensated_sum(pairs.iter().map(|(v, _)| (v - t).powi(2))) / r);
        (
            mean,
            var,
            (var / r).sqrt(),
            ((m4 - m2 * m2).max(0.0) / r).sqrt(),
            mse,
        )
    };
    let bias = target.map(|t| mean - t);
    let unbiased = match (exact, target) {
        (true, Some(t)) => Some((mean - t).abs() <= UNBIASED_TOLERANCE * t.abs().max(1.0)),
        _ => None,
    };
    let distribution = if exact || count == 0 {
        None
    } else {
        let mut sorted: Vec<f64> = pairs.iter().map(|(v, _)| *v).collect();
        sorted.sort_by(f64::total_cmp);
        Some(Distribution {
            min: sorted[0],
            q25: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q75: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    };
    SeriesSummary {
        name: name.to_string(),
        count,
        mean,
        variance,
        mean_se,
        variance_se,
        target,
        bias,
        mse,
        unbiased,
        distribution,
    }
}

/// Weighted mean taken about the first value, so constant series come out
/// exact whatever the rounding of the weights.
fn shifted_mean(pairs: impl Iterator<Item = (f64, f64)> + Clone, total: f64) -> f64 {
    let Some((origin, _)) = pairs.clone().next() else {
        return f64::NAN;
    };
    origin + compensated_sum(pairs.map(|(v, w)| (v - origin) * w)) / total
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn joint(a: &[f64], b: &[f64], weighting: &Weighting<'_>) -> Vec<(f64, f64, f64)> {
    (0..a.len())
        .filter(|&i| a[i].is_finite() && b[i].is_finite())
        .map(|i| {
            let p = match weighting {
                Weighting::Equal => 1.0,
                Weighting::Probabilities(p) => p[i],
            };
            (a[i], b[i], p)
        })
        .collect()
}

/// `Var(a) / Var(b)` with a delta-method standard error on
/// `log Var(a) − log Var(b)` using replication-level squared deviations.
pub(crate) fn summarize_ratio(
    numerator: &str,
    denominator: &str,
    a: &[f64],
    b: &[f64],
    target: Option<f64>,
    weighting: &Weighting<'_>,
) -> RatioSummary {
    let rows = joint(a, b, weighting);
    let total = compensated_sum(rows.iter().map(|r| r.2));
    let (ratio, se) = if rows.len() < 2 {
        (f64::NAN, f64::NAN)
    } else {
        let ma = shifted_mean(rows.iter().map(|r| (r.0, r.2)), total);
        let mb = shifted_mean(rows.iter().map(|r| (r.1, r.2)), total);
        let u: Vec<f64> = rows.iter().map(|r| (r.0 - ma).powi(2)).collect();
        let v: Vec<f64> = rows.iter().map(|r| (r.1 - mb).powi(2)).collect();
        let vu = compensated_sum(u.iter().zip(&rows).map(|(x, r)| x * r.2)) / total;
        let vv = compensated_sum(v.iter().zip(&rows).map(|(x, r)| x * r.2)) / total;
        let ratio = vu / vv;
        let se = match weighting {
            Weighting::Probabilities(_) => 0.0,
            Weighting::Equal => {
                let n = rows.len() as f64;
                let z: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x / vu - y / vv).collect();
                let mz = compensated_sum(z.iter().copied()) / n;
                let sz = compensated_sum(z.iter().map(|x| (x - mz).powi(2))) / (n - 1.0);
                ratio.abs() * (sz / n).sqrt()
            }
        };
        (ratio, se)
    };
    RatioSummary {
        numerator: numerator.to_string(),
        denominator: denominator.to_string(),
        ratio,
        se,
        target,
    }
}

pub(crate) fn summarize_covariance(
    first: &str,
    second: &str,
    a: &[f64],
    b: &[f64],
    target: Option<f64>,
    weighting: &Weighting<'_>,
) -> CovarianceSummary {
    let rows = joint(a, b, weighting);
    let total = compensated_sum(rows.iter().map(|r| r.2));
    let (covariance, se) = if rows.len() < 2 {
        (f64::NAN, f64::NAN)
    } else {
        let ma = shifted_mean(rows.iter().map(|r| (r.0, r.2)), total);
        let mb = shifted_mean(rows.iter().map(|r| (r.1, r.2)), total);
        let prod: Vec<f64> = rows.iter().map(|r| (r.0 - ma) * (r.1 - mb)).collect();
        match weighting {
            Weighting::Probabilities(_) => (
                compensated_sum(prod.iter().zip(&rows).map(|(x, r)| x * r.2)) / total,
                0.0,
            ),
            Weighting::Equal => {
                let n = rows.len() as f64;
                let mean = compensated_sum(prod.iter().copied()) / n;
                let spread = compensated_sum(prod.iter().map(|x| (x - mean).powi(2))) / (n - 1.0);
                (mean * n / (n - 1.0), (spread / n).sqrt())
            }
        }
    };
    CovarianceSummary {
        first: first.to_string(),
        second: second.to_string(),
        covariance,
        se,
        target,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monte_carlo_moments() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let s = summarize_series("a", &v, Some(2.0), &Weighting::Equal);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.bias, Some(0.5));
        assert_eq!(s.mse, Some((1.0 + 0.0 + 1.0 + 4.0) / 4.0));
        let d = s.distribution.unwrap();
        assert_eq!((d.min, d.median, d.max), (1.0, 2.5, 4.0));
        assert_eq!(s.unbiased, None);
    }

    #[test]
    fn exact_moments_have_no_standard_error() {
        let v = [7.0, 7.0, 7.0];
        let p = [0.2, 0.3, 0.5];
        let s = summarize_series("c", &v, Some(7.0), &Weighting::Probabilities(&p));
        assert_eq!((s.mean, s.variance, s.mean_se), (7.0, 0.0, 0.0));
        assert_eq!(s.unbiased, Some(true));
    }

    #[test]
    fn failed_values_are_skipped() {
        let v = [1.0, f64::NAN, 3.0];
        let s = summarize_series("a", &v, None, &Weighting::Equal);
        assert_eq!(s.count, 2);
        assert_eq!(s.mean, 2.0);
    }

    #[test]
    fn ratio_of_scaled_series() {
        let a: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v * 2.0).collect();
        let r = summarize_ratio("a", "b", &a, &b, Some(0.25), &Weighting::Equal);
        assert!((r.ratio - 0.25).abs() < 1e-14);
        assert!(r.se < 1e-12);
        let c = summarize_covariance("a", "b", &a, &b, None, &Weighting::Equal);
        let s = summarize_series("a", &a, None, &Weighting::Equal);
        assert!((c.covariance - 2.0 * s.variance).abs() < 1e-12);
    }
}
