//! Exhaustive listing of every possible sample with its probability. This is
//! the substrate for the exact-moment oracles, so it is deliberately written
//! from the design definitions and never consults `pi_first` / `pi_joint`.

use itertools::Itertools;

use super::{Design, DesignSpec, Sample};
use crate::error::{Error, Result};
use crate::numeric::binomial;

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

pub type SampleStream<'a> = Box<dyn Iterator<Item = (Sample, f64)> + 'a>;

impl Design {
    /// Number of distinct outcomes `enumerate_samples` would visit (an upper
    /// bound for two-stage designs with unequal cluster sizes).
    pub fn sample_count(&self) -> Result<f64> {
        let big_m = self.members.len();
        Ok(match &self.spec {
            DesignSpec::Census => 1.0,
            DesignSpec::Srswor { n } => binomial(self.n_pop, *n),
            DesignSpec::Stratified { n } => n
                .iter()
                .zip(&self.members)
                .map(|(&nh, m)| binomial(m.len(), nh))
                .product(),
            DesignSpec::Cluster { n, m: None } => binomial(big_m, *n),
            DesignSpec::Cluster { n, m: Some(m) } => {
                let widest = self
                    .members
                    .iter()
                    .map(|mem| binomial(mem.len(), *m))
                    .fold(1.0, f64::max);
                binomial(big_m, *n) * widest.powi(*n as i32)
            }
            DesignSpec::ClusterWr { n } => (big_m as f64).powi(*n as i32),
            DesignSpec::Nested { .. } => {
                return Err(Error::unsupported("enumerate_samples", self.kind_name()))
            }
        })
    }

    /// Every sample with its probability. Refuses when the outcome count
    /// exceeds `cap`.
    pub fn enumerate_samples(&self, cap: u64) -> Result<SampleStream<'_>> {
        let count = self.sample_count()?;
        if count > cap as f64 {
            return Err(Error::EnumerationCap { count, cap });
        }
        let big_m = self.members.len();
        let stream: SampleStream<'_> = match &self.spec {
            DesignSpec::Census => Box::new(std::iter::once((Sample::new((0..self.n_pop).collect()), 1.0))),
            DesignSpec::Srswor { n } => {
                let p = 1.0 / binomial(self.n_pop, *n);
                Box::new((0..self.n_pop).combinations(*n).map(move |c| (Sample::new(c), p)))
            }
            DesignSpec::Stratified { n } => {
                let p = 1.0 / count;
                let per_stratum: Vec<Vec<Vec<usize>>> = n
                    .iter()
                    .zip(&self.members)
                    .map(|(&nh, mem)| mem.iter().copied().combinations(nh).collect())
                    .collect();
                Box::new(
                    per_stratum
                        .into_iter()
                        .map(|v| v.into_iter())
                        .multi_cartesian_product()
                        .map(move |parts| {
                            let mut u: Vec<usize> = parts.into_iter().flatten().collect();
                            u.sort_unstable();
                            (Sample::new(u), p)
                        }),
                )
            }
            DesignSpec::Cluster { n, m: None } => {
                let p = 1.0 / binomial(big_m, *n);
                Box::new((0..big_m).combinations(*n).map(move |cs| {
                    let mut u: Vec<usize> =
                        cs.iter().flat_map(|&c| self.members[c].iter().copied()).collect();
                    u.sort_unstable();
                    (Sample::new(u), p)
                }))
            }
            DesignSpec::Cluster { n, m: Some(m) } => {
                let m = *m;
                let outer = 1.0 / binomial(big_m, *n);
                Box::new((0..big_m).combinations(*n).flat_map(move |cs| {
                    let inner_p: f64 = cs
                        .iter()
                        .map(|&c| 1.0 / binomial(self.members[c].len(), m))
                        .product();
                    let choices: Vec<Vec<Vec<usize>>> = cs
                        .iter()
                        .map(|&c| self.members[c].iter().copied().combinations(m).collect())
                        .collect();
                    choices
                        .into_iter()
                        .map(|v| v.into_iter())
                        .multi_cartesian_product()
                        .map(move |parts| {
                            let mut u: Vec<usize> = parts.into_iter().flatten().collect();
                            u.sort_unstable();
                            (Sample::new(u), outer * inner_p)
                        })
                }))
            }
            DesignSpec::ClusterWr { n } => {
                let p = 1.0 / count;
                Box::new(
                    (0..*n)
                        .map(|_| 0..big_m)
                        .multi_cartesian_product()
                        .map(move |draws| {
                            let u: Vec<usize> = draws
                                .iter()
                                .flat_map(|&c| self.members[c].iter().copied())
                                .collect();
                            (Sample::new(u), p)
                        }),
                )
            }
            DesignSpec::Nested { .. } => unreachable!("rejected by sample_count"),
        };
        Ok(stream)
    }
}
