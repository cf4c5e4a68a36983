//! Summation and small dense symmetric solves shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition numbers above this are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Eigenvalues below this fraction of the matrix scale span a null direction.
pub const NULL_EIGEN_RATIO: f64 = 1e-10;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Ratio of the largest to the smallest eigenvalue magnitude. Infinite when
/// the smallest eigenvalue is not strictly positive.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b` for a symmetric positive definite `a`, refusing matrices
/// whose condition estimate exceeds [`CONDITION_LIMIT`].
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let condition = condition_estimate(a);
    if condition.is_nan() || condition > CONDITION_LIMIT {
        return Err(Error::RankDeficient {
            what: what.to_string(),
            condition,
        });
    }
    let chol = a.clone().cholesky().ok_or_else(|| Error::RankDeficient {
        what: what.to_string(),
        condition,
    })?;
    Ok(chol.solve(b))
}

/// Moore-Penrose style inverse of a symmetric (possibly indefinite) matrix.
///
/// Eigen-directions with `|lambda| <= NULL_EIGEN_RATIO * max(scale, max|lambda|)`
/// are dropped; `scale` lets callers pass the magnitude of the terms the
/// matrix was assembled from, so cancellation noise is recognised as zero.
#[derive(Clone, Debug)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub null_rank: usize,
}

pub fn pseudo_inverse(a: &DMatrix<f64>, scale: f64) -> Result<PseudoInverse> {
    let p = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient {
            what: "covariance matrix with non-finite entries".into(),
            condition: f64::INFINITY,
        });
    }
    if p == 0 {
        return Ok(PseudoInverse {
            matrix: DMatrix::zeros(0, 0),
            null_rank: 0,
        });
    }
    let eig = SymmetricEigen::new(a.clone());
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let threshold = NULL_EIGEN_RATIO * largest.max(scale.abs());
    let mut inv = DMatrix::zeros(p, p);
    let mut null_rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= threshold {
            null_rank += 1;
            continue;
        }
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / lambda;
    }
    Ok(PseudoInverse {
        matrix: inv,
        null_rank,
    })
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let p = a.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Binomial coefficient as a float, exact for results below 2^53.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    if acc < 9.0e15 {
        acc.round()
    } else {
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values), 2.0);
        assert_ne!(values.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(6, 3), 20.0);
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(30, 15), 155_117_520.0);
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn spd_solve_and_gate() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_spd(&a, &b, "test").unwrap();
        assert!((&a * &x - &b).norm() < 1e-14);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match solve_spd(&singular, &b, "gram") {
            Err(Error::RankDeficient { condition, .. }) => assert!(condition > CONDITION_LIMIT),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn pseudo_inverse_drops_null_direction() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let pinv = pseudo_inverse(&a, 0.0).unwrap();
        assert_eq!(pinv.null_rank, 1);
        assert!((pinv.matrix[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(pinv.matrix[(1, 1)], 0.0);

        let zero = DMatrix::zeros(3, 3);
        assert_eq!(pseudo_inverse(&zero, 0.0).unwrap().null_rank, 3);
    }

    #[test]
    fn pseudo_inverse_scale_flags_noise() {
        let a = DMatrix::from_element(1, 1, 1e-13);
        assert_eq!(pseudo_inverse(&a, 0.0).unwrap().null_rank, 0);
        assert_eq!(pseudo_inverse(&a, 1e4).unwrap().null_rank, 1);
    }
}
