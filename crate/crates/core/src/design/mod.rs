//! Fixed-size sampling designs bound to a population.
//!
//! A [`DesignSpec`] is the population-free description (what the config
//! grammar produces); [`Design`] binds it to a [`Population`] and exposes
//! exact first- and second-order inclusion probabilities, expansion weights,
//! sample draws, and exhaustive enumeration.

mod enumerate;
pub mod grammar;

use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Population;

pub use enumerate::DEFAULT_ENUMERATION_CAP;

/// How the measured subsample S1 is taken inside each sampled cluster.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerRule {
    /// The first `k_measured` units of the cluster, in population order.
    #[default]
    First,
    /// A simple random subsample of `k_measured` units.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// Every unit, with probability one.
    Census,
    Srswor {
        n: usize,
    },
    /// SRSWOR of `n[h]` units inside stratum h (strata ordered by code).
    Stratified {
        n: Vec<usize>,
    },
    /// SRSWOR of `n` clusters; all units of a sampled cluster when `m` is
    /// `None`, otherwise an SRSWOR of `m` units within each sampled cluster.
    Cluster {
        n: usize,
        #[serde(default)]
        m: Option<usize>,
    },
    /// `n` independent uniform draws of whole clusters.
    ClusterWr {
        n: usize,
    },
    /// Outer cluster design for S2 (x measured) with `k_measured` units per
    /// sampled cluster forming S1 (y measured).
    Nested {
        outer: Box<DesignSpec>,
        k_measured: usize,
        #[serde(default)]
        rule: InnerRule,
    },
}

impl DesignSpec {
    /// Parses the config mini-grammar, e.g. `srswor(n=50)`,
    /// `stratified(n=[50, 50])`, `cluster(n=10, m=2)`,
    /// `cluster_wr(n=40, k_measured=1)`.
    pub fn parse(input: &str) -> Result<Self> {
        let call = grammar::parse_call(input)?;
        let spec = match call.name.as_str() {
            "census" => {
                call.expect_keys(&[])?;
                DesignSpec::Census
            }
            "srswor" => {
                call.expect_keys(&["n"])?;
                DesignSpec::Srswor {
                    n: call.required_count("n")?,
                }
            }
            "stratified" => {
                call.expect_keys(&["n"])?;
                let n = call
                    .counts("n")?
                    .ok_or_else(|| grammar::grammar_error("stratified", "missing required argument 'n'"))?;
                DesignSpec::Stratified { n }
            }
            "cluster" | "cluster_wr" => {
                call.expect_keys(&["n", "m", "k_measured", "rule"])?;
                let n = call.required_count("n")?;
                let wr = call.name == "cluster_wr";
                let m = call.count("m")?;
                if wr && m.is_some() {
                    return Err(grammar::grammar_error("m", "cluster_wr takes whole clusters"));
                }
                let outer = if wr {
                    DesignSpec::ClusterWr { n }
                } else {
                    DesignSpec::Cluster { n, m }
                };
                match call.count("k_measured")? {
                    None => {
                        if let Some(r) = call.word("rule")? {
                            return Err(grammar::grammar_error(r, "rule needs k_measured"));
                        }
                        outer
                    }
                    Some(k_measured) => {
                        if m.is_some() {
                            return Err(grammar::grammar_error(
                                "k_measured",
                                "nested designs take whole clusters in the outer stage",
                            ));
                        }
                        let rule = match call.word("rule")? {
                            None | Some("first") => InnerRule::First,
                            Some("random") => InnerRule::Random,
                            Some(other) => {
                                return Err(grammar::grammar_error(other, "expected first or random"))
                            }
                        };
                        DesignSpec::Nested {
                            outer: Box::new(outer),
                            k_measured,
                            rule,
                        }
                    }
                }
            }
            other => {
                return Err(grammar::grammar_error(
                    other,
                    "unknown design; expected census, srswor, stratified, cluster or cluster_wr",
                ))
            }
        };
        Ok(spec)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DesignSpec::Census => "census",
            DesignSpec::Srswor { .. } => "srswor",
            DesignSpec::Stratified { .. } => "stratified",
            DesignSpec::Cluster { m: None, .. } => "cluster",
            DesignSpec::Cluster { m: Some(_), .. } => "two-stage cluster",
            DesignSpec::ClusterWr { .. } => "cluster_wr",
            DesignSpec::Nested { .. } => "nested",
        }
    }

    pub fn is_with_replacement(&self) -> bool {
        match self {
            DesignSpec::ClusterWr { .. } => true,
            DesignSpec::Nested { outer, .. } => outer.is_with_replacement(),
            _ => false,
        }
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignSpec::Census => write!(f, "census"),
            DesignSpec::Srswor { n } => write!(f, "srswor(n={n})"),
            DesignSpec::Stratified { n } => {
                let parts: Vec<String> = n.iter().map(|v| v.to_string()).collect();
                write!(f, "stratified(n=[{}])", parts.join(", "))
            }
            DesignSpec::Cluster { n, m: None } => write!(f, "cluster(n={n})"),
            DesignSpec::Cluster { n, m: Some(m) } => write!(f, "cluster(n={n}, m={m})"),
            DesignSpec::ClusterWr { n } => write!(f, "cluster_wr(n={n})"),
            DesignSpec::Nested {
                outer,
                k_measured,
                rule,
            } => {
                let (name, n) = match outer.as_ref() {
                    DesignSpec::ClusterWr { n } => ("cluster_wr", *n),
                    DesignSpec::Cluster { n, .. } => ("cluster", *n),
                    _ => ("?", 0),
                };
                let rule = match rule {
                    InnerRule::First => "first",
                    InnerRule::Random => "random",
                };
                write!(f, "{name}(n={n}, k_measured={k_measured}, rule={rule})")
            }
        }
    }
}

/// Units drawn by a design, in draw order. With-replacement designs repeat
/// a unit once per draw.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    units: Vec<usize>,
}

impl Sample {
    pub fn new(units: Vec<usize>) -> Self {
        Self { units }
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.units.contains(&id)
    }
}

/// S2 (x measured) and S1 ⊆ S2 (y measured), each listed per outer draw.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NestedSample {
    pub s2: Sample,
    pub s1: Sample,
}

/// Second-order structure shared by every supported without-replacement
/// design: units fall into blocks with a common first-order probability,
/// off-diagonal pairs inside block b have joint probability `pi_within[b]`,
/// and pairs across blocks b, b' have `cross * pi[b] * pi[b']`.
#[derive(Clone, Debug)]
pub struct BlockStructure<'a> {
    pub block_of: &'a [usize],
    pub pi: Vec<f64>,
    pub pi_within: Vec<f64>,
    pub cross: f64,
}

#[derive(Clone, Debug)]
pub struct Design {
    spec: DesignSpec,
    n_pop: usize,
    block_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Design {
    /// Binds `spec` to `pop`, checking labels and sizes.
    pub fn new(spec: DesignSpec, pop: &Population) -> Result<Self> {
        let n_pop = pop.len();
        let (block_of, members) = match &spec {
            DesignSpec::Census | DesignSpec::Srswor { .. } => (vec![0; n_pop], vec![(0..n_pop).collect()]),
            DesignSpec::Stratified { .. } => blocks_from(pop, |u| u.stratum, "stratum")?,
            DesignSpec::Cluster { .. } | DesignSpec::ClusterWr { .. } | DesignSpec::Nested { .. } => {
                blocks_from(pop, |u| u.cluster, "cluster")?
            }
        };
        let design = Self {
            spec,
            n_pop,
            block_of,
            members,
        };
        design.validate()?;
        Ok(design)
    }

    fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Configuration(m));
        match &self.spec {
            DesignSpec::Census => Ok(()),
            DesignSpec::Srswor { n } => {
                if *n == 0 || *n > self.n_pop {
                    return cfg(format!("srswor needs 1 <= n <= N={}, got n={n}", self.n_pop));
                }
                Ok(())
            }
            DesignSpec::Stratified { n } => {
                if n.len() != self.members.len() {
                    return cfg(format!(
                        "stratified design lists {} allocations but the population has {} strata",
                        n.len(),
                        self.members.len()
                    ));
                }
                for (h, (&nh, m)) in n.iter().zip(&self.members).enumerate() {
                    if nh == 0 || nh > m.len() {
                        return cfg(format!("stratum {h}: need 1 <= n_h <= N_h={}, got {nh}", m.len()));
                    }
                }
                Ok(())
            }
            DesignSpec::Cluster { n, m } => {
                let big_m = self.members.len();
                if *n == 0 || *n > big_m {
                    return cfg(format!("cluster design needs 1 <= n <= M={big_m}, got n={n}"));
                }
                if let Some(m) = m {
                    let smallest = self.members.iter().map(Vec::len).min().unwrap_or(0);
                    if *m == 0 || *m > smallest {
                        return cfg(format!(
                            "within-cluster size m={m} must be in 1..={smallest} (smallest cluster)"
                        ));
                    }
                }
                Ok(())
            }
            DesignSpec::ClusterWr { n } => {
                if *n == 0 {
                    return cfg("cluster_wr needs n >= 1".into());
                }
                Ok(())
            }
            DesignSpec::Nested {
                outer, k_measured, ..
            } => {
                match outer.as_ref() {
                    DesignSpec::ClusterWr { n } if *n >= 1 => {}
                    DesignSpec::Cluster { n, m: None } if *n >= 1 && *n <= self.members.len() => {}
                    other => {
                        return cfg(format!(
                            "nested designs need a whole-cluster outer stage, got {other}"
                        ))
                    }
                }
                let smallest = self.members.iter().map(Vec::len).min().unwrap_or(0);
                if *k_measured == 0 || *k_measured > smallest {
                    return cfg(format!(
                        "k_measured={k_measured} must be in 1..={smallest} (smallest cluster)"
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn kind_name(&self) -> &'static str {
        self.spec.kind_name()
    }

    pub fn population_size(&self) -> usize {
        self.n_pop
    }

    /// Number of strata or clusters (1 for unblocked designs).
    pub fn block_count(&self) -> usize {
        self.members.len()
    }

    pub fn block_of(&self, id: usize) -> usize {
        self.block_of[id]
    }

    pub fn block_members(&self, block: usize) -> &[usize] {
        &self.members[block]
    }

    pub fn is_with_replacement(&self) -> bool {
        self.spec.is_with_replacement()
    }

    pub fn is_census(&self) -> bool {
        match self.spec {
            DesignSpec::Census => true,
            DesignSpec::Srswor { n } => n == self.n_pop,
            _ => false,
        }
    }

    fn expected_clusters(&self) -> usize {
        self.members.len()
    }

    /// First-order inclusion probability pi_i.
    pub fn pi_first(&self, id: usize) -> f64 {
        let n_pop = self.n_pop as f64;
        match &self.spec {
            DesignSpec::Census => 1.0,
            DesignSpec::Srswor { n } => *n as f64 / n_pop,
            DesignSpec::Stratified { n } => {
                let h = self.block_of[id];
                n[h] as f64 / self.members[h].len() as f64
            }
            DesignSpec::Cluster { n, m } => {
                let big_m = self.expected_clusters() as f64;
                let outer = *n as f64 / big_m;
                match m {
                    None => outer,
                    Some(m) => outer * (*m as f64 / self.members[self.block_of[id]].len() as f64),
                }
            }
            DesignSpec::ClusterWr { n } => {
                let big_m = self.expected_clusters() as f64;
                1.0 - (1.0 - 1.0 / big_m).powi(*n as i32)
            }
            DesignSpec::Nested { outer, .. } => match outer.as_ref() {
                DesignSpec::ClusterWr { n } => {
                    let big_m = self.expected_clusters() as f64;
                    1.0 - (1.0 - 1.0 / big_m).powi(*n as i32)
                }
                DesignSpec::Cluster { n, .. } => *n as f64 / self.expected_clusters() as f64,
                _ => unreachable!("validated outer stage"),
            },
        }
    }

    /// Second-order inclusion probability pi_ij, with pi_ii = pi_i.
    pub fn pi_joint(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return match self.spec {
                DesignSpec::ClusterWr { .. } | DesignSpec::Nested { .. } => {
                    Err(Error::unsupported("pi_joint", self.kind_name()))
                }
                _ => Ok(self.pi_first(i)),
            };
        }
        let (bi, bj) = (self.block_of[i], self.block_of[j]);
        match &self.spec {
            DesignSpec::Census => Ok(1.0),
            DesignSpec::Srswor { n } => Ok(pair_fraction(*n, self.n_pop)),
            DesignSpec::Stratified { n } => {
                if bi == bj {
                    Ok(pair_fraction(n[bi], self.members[bi].len()))
                } else {
                    Ok(self.pi_first(i) * self.pi_first(j))
                }
            }
            DesignSpec::Cluster { n, m } => {
                let big_m = self.expected_clusters();
                match m {
                    None => {
                        if bi == bj {
                            Ok(*n as f64 / big_m as f64)
                        } else {
                            Ok(pair_fraction(*n, big_m))
                        }
                    }
                    Some(m) => {
                        if bi == bj {
                            let k = self.members[bi].len();
                            Ok(*n as f64 / big_m as f64 * pair_fraction(*m, k))
                        } else {
                            let fi = *m as f64 / self.members[bi].len() as f64;
                            let fj = *m as f64 / self.members[bj].len() as f64;
                            Ok(pair_fraction(*n, big_m) * fi * fj)
                        }
                    }
                }
            }
            DesignSpec::ClusterWr { .. } | DesignSpec::Nested { .. } => {
                Err(Error::unsupported("pi_joint", self.kind_name()))
            }
        }
    }

    /// HT expansion weight for one appearance of `id` in a sample: 1/pi_i
    /// without replacement, M/n per draw for whole-cluster with-replacement
    /// draws. For nested designs this is the S2 weight.
    pub fn expansion(&self, id: usize) -> f64 {
        match &self.spec {
            DesignSpec::ClusterWr { n } => self.expected_clusters() as f64 / *n as f64,
            DesignSpec::Nested { outer, .. } => match outer.as_ref() {
                DesignSpec::ClusterWr { n } | DesignSpec::Cluster { n, .. } => {
                    self.expected_clusters() as f64 / *n as f64
                }
                _ => unreachable!("validated outer stage"),
            },
            _ => 1.0 / self.pi_first(id),
        }
    }

    /// Weight of a unit in the measured subsample S1 of a nested design:
    /// the outer expansion times K_c / k_measured.
    pub fn inner_expansion(&self, id: usize) -> Result<f64> {
        match &self.spec {
            DesignSpec::Nested { k_measured, .. } => {
                let k = self.members[self.block_of[id]].len() as f64;
                Ok(self.expansion(id) * k / *k_measured as f64)
            }
            _ => Err(Error::unsupported("inner_expansion", self.kind_name())),
        }
    }

    /// Block decomposition of pi_ij for without-replacement designs.
    pub fn block_structure(&self) -> Option<BlockStructure<'_>> {
        let blocks = self.members.len();
        let first_of = |b: usize| self.members[b][0];
        match &self.spec {
            DesignSpec::Census | DesignSpec::Srswor { .. } => {
                let pi = self.pi_first(0);
                let within = if self.n_pop > 1 {
                    self.pi_joint(0, 1).ok()?
                } else {
                    pi
                };
                Some(BlockStructure {
                    block_of: &self.block_of,
                    pi: vec![pi],
                    pi_within: vec![within],
                    cross: 1.0,
                })
            }
            DesignSpec::Stratified { n } => Some(BlockStructure {
                block_of: &self.block_of,
                pi: (0..blocks).map(|b| self.pi_first(first_of(b))).collect(),
                pi_within: (0..blocks)
                    .map(|b| pair_fraction(n[b], self.members[b].len()))
                    .collect(),
                cross: 1.0,
            }),
            DesignSpec::Cluster { n, m } => {
                let big_m = blocks;
                let cross = if *n < 2 {
                    0.0
                } else {
                    (*n as f64 - 1.0) * big_m as f64 / (*n as f64 * (big_m as f64 - 1.0))
                };
                let pi: Vec<f64> = (0..blocks).map(|b| self.pi_first(first_of(b))).collect();
                let pi_within = match m {
                    None => pi.clone(),
                    Some(m) => (0..blocks)
                        .map(|b| *n as f64 / big_m as f64 * pair_fraction(*m, self.members[b].len()))
                        .collect(),
                };
                Some(BlockStructure {
                    block_of: &self.block_of,
                    pi,
                    pi_within,
                    cross,
                })
            }
            DesignSpec::ClusterWr { .. } | DesignSpec::Nested { .. } => None,
        }
    }

    /// Whether `Σ_{i∈S} 1/π_i` equals N for every sample.
    pub fn has_fixed_count(&self) -> bool {
        match &self.spec {
            DesignSpec::Census | DesignSpec::Srswor { .. } | DesignSpec::Stratified { .. } => true,
            DesignSpec::Cluster { .. } | DesignSpec::ClusterWr { .. } => {
                self.members.windows(2).all(|w| w[0].len() == w[1].len())
            }
            DesignSpec::Nested { .. } => false,
        }
    }

    /// Draws one sample. Unit lists are sorted for without-replacement
    /// designs and in draw order for with-replacement designs.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sample> {
        let units = match &self.spec {
            DesignSpec::Census => (0..self.n_pop).collect(),
            DesignSpec::Srswor { n } => {
                let mut v = index::sample(rng, self.n_pop, *n).into_vec();
                v.sort_unstable();
                v
            }
            DesignSpec::Stratified { n } => {
                let mut v = Vec::with_capacity(n.iter().sum());
                for (h, &nh) in n.iter().enumerate() {
                    let m = &self.members[h];
                    v.extend(index::sample(rng, m.len(), nh).into_iter().map(|k| m[k]));
                }
                v.sort_unstable();
                v
            }
            DesignSpec::Cluster { n, m } => {
                let mut v = Vec::new();
                for c in index::sample(rng, self.members.len(), *n) {
                    let mem = &self.members[c];
                    match m {
                        None => v.extend_from_slice(mem),
                        Some(m) => v.extend(index::sample(rng, mem.len(), *m).into_iter().map(|k| mem[k])),
                    }
                }
                v.sort_unstable();
                v
            }
            DesignSpec::ClusterWr { n } => {
                let mut v = Vec::new();
                for _ in 0..*n {
                    let c = rng.random_range(0..self.members.len());
                    v.extend_from_slice(&self.members[c]);
                }
                v
            }
            DesignSpec::Nested { .. } => {
                return Err(Error::Configuration(
                    "nested designs produce two samples; use draw_nested".into(),
                ))
            }
        };
        Ok(Sample { units })
    }

    /// Draws S2 and S1 for a nested design.
    pub fn draw_nested<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NestedSample> {
        let DesignSpec::Nested {
            outer,
            k_measured,
            rule,
        } = &self.spec
        else {
            return Err(Error::Configuration(format!(
                "draw_nested needs a nested design, got {}",
                self.kind_name()
            )));
        };
        let clusters: Vec<usize> = match outer.as_ref() {
            DesignSpec::ClusterWr { n } => (0..*n).map(|_| rng.random_range(0..self.members.len())).collect(),
            DesignSpec::Cluster { n, .. } => {
                let mut c = index::sample(rng, self.members.len(), *n).into_vec();
                c.sort_unstable();
                c
            }
            _ => unreachable!("validated outer stage"),
        };
        let mut s2 = Vec::new();
        let mut s1 = Vec::with_capacity(clusters.len() * k_measured);
        for c in clusters {
            let mem = &self.members[c];
            s2.extend_from_slice(mem);
            match rule {
                InnerRule::First => s1.extend_from_slice(&mem[..*k_measured]),
                InnerRule::Random => {
                    let mut pick = index::sample(rng, mem.len(), *k_measured).into_vec();
                    pick.sort_unstable();
                    s1.extend(pick.into_iter().map(|k| mem[k]));
                }
            }
        }
        Ok(NestedSample {
            s2: Sample { units: s2 },
            s1: Sample { units: s1 },
        })
    }

    /// Checks an externally supplied sample against the design's support.
    pub fn validate_sample(&self, sample: &Sample) -> Result<()> {
        for &u in sample.units() {
            if u >= self.n_pop {
                return Err(Error::Configuration(format!(
                    "sample unit {u} is outside the population (N={})",
                    self.n_pop
                )));
            }
        }
        if !self.is_with_replacement() {
            let mut sorted = sample.units().to_vec();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Configuration(
                    "without-replacement sample lists a unit twice".into(),
                ));
            }
            let expected = match &self.spec {
                DesignSpec::Census => Some(self.n_pop),
                DesignSpec::Srswor { n } => Some(*n),
                DesignSpec::Stratified { n } => Some(n.iter().sum()),
                _ => None,
            };
            if let Some(e) = expected {
                if e != sample.len() {
                    return Err(Error::Configuration(format!(
                        "design fixes the sample size at {e}, got {}",
                        sample.len()
                    )));
                }
            }
            if let DesignSpec::Stratified { n } = &self.spec {
                let mut counts = vec![0usize; n.len()];
                for &u in sample.units() {
                    counts[self.block_of[u]] += 1;
                }
                if counts != *n {
                    return Err(Error::Configuration(format!(
                        "sample allocation {counts:?} does not match design {n:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// n(n-1) / (N(N-1)), the chance that a given pair lands in an SRSWOR of n
/// out of N. Zero when n < 2.
fn pair_fraction(n: usize, big_n: usize) -> f64 {
    if n < 2 || big_n < 2 {
        return 0.0;
    }
    (n as f64 * (n as f64 - 1.0)) / (big_n as f64 * (big_n as f64 - 1.0))
}

fn blocks_from(
    pop: &Population,
    label: impl Fn(&crate::population::Unit) -> Option<u32>,
    what: &str,
) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let mut codes = Vec::with_capacity(pop.len());
    for u in pop.units() {
        match label(u) {
            Some(c) => codes.push(c),
            None => return Err(Error::Configuration(format!("unit {} has no {what} label", u.id))),
        }
    }
    let mut present: Vec<u32> = codes.clone();
    present.sort_unstable();
    present.dedup();
    let mut block_of = Vec::with_capacity(codes.len());
    let mut members = vec![Vec::new(); present.len()];
    for (id, c) in codes.iter().enumerate() {
        let b = present.binary_search(c).expect("code collected above");
        block_of.push(b);
        members[b].push(id);
    }
    Ok((block_of, members))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{Population, Unit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn labelled(
        n: usize,
        stratum: impl Fn(usize) -> u32,
        cluster: impl Fn(usize) -> u32,
    ) -> Population {
        let units = (0..n)
            .map(|id| Unit {
                id,
                y: id as f64 + 1.0,
                x: vec![(id as f64).sin()],
                stratum: Some(stratum(id)),
                cluster: Some(cluster(id)),
            })
            .collect();
        Population::new(units).unwrap()
    }

    #[test]
    fn srswor_closed_forms() {
        let pop = labelled(6, |_| 0, |_| 0);
        let d = Design::new(DesignSpec::Srswor { n: 3 }, &pop).unwrap();
        assert_eq!(d.pi_first(2), 0.5);
        assert_eq!(d.pi_joint(1, 4).unwrap(), 0.2);
        assert_eq!(d.pi_joint(3, 3).unwrap(), 0.5);
    }

    #[test]
    fn stratified_cross_pairs_are_independent() {
        let pop = labelled(10, |i| (i >= 4) as u32, |_| 0);
        let d = Design::new(DesignSpec::Stratified { n: vec![2, 3] }, &pop).unwrap();
        assert_eq!(d.pi_first(0), 0.5);
        assert_eq!(d.pi_first(5), 0.5);
        assert_eq!(d.pi_joint(0, 5).unwrap(), d.pi_first(0) * d.pi_first(5));
        assert_eq!(d.pi_joint(5, 6).unwrap(), 6.0 / 30.0);
    }

    #[test]
    fn cluster_take_all_same_cluster() {
        let pop = labelled(12, |_| 0, |i| (i / 3) as u32);
        let d = Design::new(DesignSpec::Cluster { n: 2, m: None }, &pop).unwrap();
        assert_eq!(d.pi_joint(0, 2).unwrap(), d.pi_first(0));
        assert_eq!(d.pi_first(0), 0.5);
        assert_eq!(d.pi_joint(0, 5).unwrap(), 2.0 / 12.0);
    }

    #[test]
    fn with_replacement_has_no_joint_probabilities() {
        let pop = labelled(12, |_| 0, |i| (i / 3) as u32);
        let d = Design::new(DesignSpec::ClusterWr { n: 2 }, &pop).unwrap();
        match d.pi_joint(0, 4) {
            Err(Error::Unsupported { design, .. }) => assert_eq!(design, "cluster_wr"),
            other => panic!("{other:?}"),
        }
        assert_eq!(d.expansion(0), 2.0);
    }

    #[test]
    fn draws_have_fixed_size() {
        let pop = labelled(20, |i| (i % 2) as u32, |i| (i / 4) as u32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let specs = [
            (DesignSpec::Srswor { n: 7 }, 7),
            (DesignSpec::Stratified { n: vec![3, 4] }, 7),
            (DesignSpec::Cluster { n: 2, m: None }, 8),
            (DesignSpec::Cluster { n: 3, m: Some(2) }, 6),
            (DesignSpec::ClusterWr { n: 3 }, 12),
            (DesignSpec::Census, 20),
        ];
        for (spec, size) in specs {
            let d = Design::new(spec, &pop).unwrap();
            for _ in 0..50 {
                let s = d.draw(&mut rng).unwrap();
                assert_eq!(s.len(), size);
                if !d.is_with_replacement() {
                    let mut u = s.units().to_vec();
                    u.dedup();
                    assert_eq!(u.len(), size);
                }
            }
        }
    }

    #[test]
    fn full_designs_return_population() {
        let pop = labelled(8, |i| (i % 2) as u32, |_| 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let all: Vec<usize> = (0..8).collect();
        let d = Design::new(DesignSpec::Srswor { n: 8 }, &pop).unwrap();
        assert_eq!(d.draw(&mut rng).unwrap().units(), &all[..]);
        assert!(d.is_census());
        let d = Design::new(DesignSpec::Stratified { n: vec![4, 4] }, &pop).unwrap();
        assert_eq!(d.draw(&mut rng).unwrap().units(), &all[..]);
    }

    #[test]
    fn srswor_inclusion_frequencies() {
        let pop = labelled(6, |_| 0, |_| 0);
        let d = Design::new(DesignSpec::Srswor { n: 3 }, &pop).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let reps = 20_000;
        let mut hits = [0usize; 6];
        for _ in 0..reps {
            for &u in d.draw(&mut rng).unwrap().units() {
                hits[u] += 1;
            }
        }
        let se = (0.25 / reps as f64).sqrt();
        for h in hits {
            let freq = h as f64 / reps as f64;
            assert!((freq - 0.5).abs() < 3.0 * se, "freq={freq}");
        }
    }

    #[test]
    fn nested_scheme() {
        let pop = labelled(12, |_| 0, |i| (i / 4) as u32);
        let d = Design::new(DesignSpec::parse("cluster(n=3, k_measured=1)").unwrap(), &pop).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = d.draw_nested(&mut rng).unwrap();
        assert_eq!(s.s2.units(), &(0..12).collect::<Vec<_>>()[..]);
        assert_eq!(s.s1.units(), &[0, 4, 8]);

        let d = Design::new(
            DesignSpec::parse("cluster_wr(n=5, k_measured=2, rule=random)").unwrap(),
            &pop,
        )
        .unwrap();
        for _ in 0..1000 {
            let s = d.draw_nested(&mut rng).unwrap();
            assert_eq!(s.s2.len(), 20);
            assert_eq!(s.s1.len(), 10);
            assert!(s.s1.units().iter().all(|u| s.s2.contains(*u)));
        }
        assert_eq!(d.inner_expansion(0).unwrap(), 3.0 / 5.0 * 4.0 / 2.0);
    }

    #[test]
    fn grammar_round_trip_and_errors() {
        for text in [
            "census",
            "srswor(n=50)",
            "stratified(n=[50, 50])",
            "cluster(n=10)",
            "cluster(n=10, m=2)",
            "cluster_wr(n=40)",
            "cluster_wr(n=40, k_measured=1, rule=first)",
        ] {
            let spec = DesignSpec::parse(text).unwrap();
            assert_eq!(spec.to_string(), text);
            assert_eq!(DesignSpec::parse(&spec.to_string()).unwrap(), spec);
        }
        match DesignSpec::parse("poisson(n=3)") {
            Err(Error::Grammar { token, .. }) => assert_eq!(token, "poisson"),
            other => panic!("{other:?}"),
        }
        match DesignSpec::parse("srswor(size=3)") {
            Err(Error::Grammar { token, .. }) => assert_eq!(token, "size"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_designs_are_rejected() {
        let pop = labelled(6, |i| (i % 2) as u32, |i| (i / 2) as u32);
        assert!(Design::new(DesignSpec::Srswor { n: 7 }, &pop).is_err());
        assert!(Design::new(DesignSpec::Stratified { n: vec![1] }, &pop).is_err());
        assert!(Design::new(DesignSpec::Stratified { n: vec![4, 1] }, &pop).is_err());
        assert!(Design::new(DesignSpec::Cluster { n: 4, m: None }, &pop).is_err());
        assert!(Design::new(DesignSpec::Cluster { n: 2, m: Some(3) }, &pop).is_err());
        let unlabelled = Population::from_columns(&[1.0, 2.0], &[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            Design::new(DesignSpec::Cluster { n: 1, m: None }, &unlabelled),
            Err(Error::Configuration(_))
        ));
    }
}
