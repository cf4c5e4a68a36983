#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use recal::design::{Design, DesignSpec, Sample};
use recal::population::{load_population, Population, Schema, Unit};

pub fn fixture(name: &str) -> Population {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name);
    load_population(path, &Schema::default()).unwrap()
}

/// A random population, design and sample with N ≤ 200 and p ≤ 3.
pub struct Instance {
    pub pop: Population,
    pub design: Design,
    pub sample: Sample,
}

pub fn random_instance(rng: &mut ChaCha8Rng, centred: bool) -> Instance {
    let p = rng.random_range(1..=3);
    let kind = rng.random_range(0..4);
    let (units, spec) = match kind {
        0 => {
            let n_pop = rng.random_range(p + 6..=200);
            let n = rng.random_range(p + 3..=n_pop.min(60));
            (
                plain_units(rng, n_pop, p, |_| None, |_| None),
                DesignSpec::Srswor { n },
            )
        }
        1 => {
            let strata = rng.random_range(2..=4);
            let sizes: Vec<usize> = (0..strata).map(|_| rng.random_range(4..=50)).collect();
            let alloc: Vec<usize> = sizes.iter().map(|&s| rng.random_range(2..=s.min(15))).collect();
            let labels: Vec<u32> = sizes
                .iter()
                .enumerate()
                .flat_map(|(h, &s)| std::iter::repeat_n(h as u32, s))
                .collect();
            let units = plain_units(rng, labels.len(), p, |i| Some(labels[i]), |_| None);
            (units, DesignSpec::Stratified { n: alloc })
        }
        _ => {
            let clusters = rng.random_range(6..=40);
            let sizes: Vec<usize> = if rng.random_bool(0.5) {
                vec![rng.random_range(2..=5); clusters]
            } else {
                (0..clusters).map(|_| rng.random_range(2..=5)).collect()
            };
            let labels: Vec<u32> = sizes
                .iter()
                .enumerate()
                .flat_map(|(c, &s)| std::iter::repeat_n(c as u32, s))
                .collect();
            let n = rng.random_range(p + 3..clusters.max(p + 4)).min(clusters);
            let m = if kind == 3 { Some(2) } else { None };
            let units = plain_units(rng, labels.len(), p, |_| None, |i| Some(labels[i]));
            (units, DesignSpec::Cluster { n, m })
        }
    };
    let units = if centred { centre(units, p) } else { units };
    let pop = Population::new(units).unwrap();
    let design = Design::new(spec, &pop).unwrap();
    let sample = design.draw(rng).unwrap();
    Instance { pop, design, sample }
}

fn plain_units(
    rng: &mut ChaCha8Rng,
    n_pop: usize,
    p: usize,
    stratum: impl Fn(usize) -> Option<u32>,
    cluster: impl Fn(usize) -> Option<u32>,
) -> Vec<Unit> {
    (0..n_pop)
        .map(|id| {
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..4.0)).collect();
            let y = x.iter().sum::<f64>() + rng.random_range(-3.0..3.0);
            Unit {
                id,
                y,
                x,
                stratum: stratum(id),
                cluster: cluster(id),
            }
        })
        .collect()
}

fn centre(mut units: Vec<Unit>, p: usize) -> Vec<Unit> {
    let n = units.len() as f64;
    for k in 0..p {
        let mean = units.iter().map(|u| u.x[k]).sum::<f64>() / n;
        for u in &mut units {
            u.x[k] -= mean;
        }
    }
    units
}

/// Solves the calibration program min Σ (w−d)²/(d q) s.t. Σ w x = t through
/// its full KKT system, with no use of the closed form.
pub fn kkt_weights(x: &[Vec<f64>], d: &[f64], q: &[f64], t: &[f64]) -> Vec<f64> {
    let n = x.len();
    let p = t.len();
    let mut a = DMatrix::<f64>::zeros(n + p, n + p);
    let mut b = DVector::<f64>::zeros(n + p);
    for i in 0..n {
        a[(i, i)] = 1.0 / (d[i] * q[i]);
        b[i] = 1.0 / q[i];
        for k in 0..p {
            a[(i, n + k)] = -x[i][k];
            a[(n + k, i)] = x[i][k];
        }
    }
    for k in 0..p {
        b[n + k] = t[k];
    }
    let sol = a.lu().solve(&b).expect("KKT system is nonsingular");
    sol.iter().take(n).copied().collect()
}

/// `Σ (|w_i| + d_i) |x_ik|` over the sample, the scale for calibration
/// residuals.
pub fn calibration_scale(pop: &Population, design: &Design, units: &[usize], weights: &[f64]) -> f64 {
    units
        .iter()
        .zip(weights)
        .map(|(&u, w)| {
            let size = w.abs() + design.expansion(u);
            pop.unit(u).x.iter().map(|x| (size * x).abs()).sum::<f64>()
        })
        .sum::<f64>()
        .max(f64::MIN_POSITIVE)
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
