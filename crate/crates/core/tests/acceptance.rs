//! Acceptance suite: one PASS/FAIL line per criterion, with timings.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{calibration_scale, fixture, kkt_weights, random_instance, relative_gap};
use recal::covariance::{cov_exact_direct, pair_coefficient, recommended_c};
use recal::design::{Design, DesignSpec};
use recal::estimators::{
    beta_o_true, fixed_beta_estimate, greg_estimate, greg_weights, optimal_estimate, optimal_weights,
    two_sample_estimate, TwoSampleCovariance,
};
use recal::montecarlo::{
    enumeration_oracle, reproduce_example1, reproduce_example2, reproduce_example3, run_with_population,
    EstimatorSpec, Example1Params, Example2Params, Example3Params, ExperimentSpec, Mode, NamedEstimator,
    PopulationSource, RunOptions, SimulationReport,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let pop = fixture("six.csv");
    let design = Design::new(DesignSpec::Srswor { n: 3 }, &pop).map_err(|e| e.to_string())?;
    let exact = cov_exact_direct(&design, &pop).map_err(|e| e.to_string())?;
    let cs = [0.0, 0.5, 1.0, recommended_c(&design)];
    let mut estimators = vec![NamedEstimator::new("ht", EstimatorSpec::Ht)];
    for (k, &c) in cs.iter().enumerate() {
        estimators.push(NamedEstimator::new(
            format!("sxx_{k}"),
            EstimatorSpec::CovHatXx { c, row: 0, col: 0 },
        ));
        estimators.push(NamedEstimator::new(
            format!("sxy_{k}"),
            EstimatorSpec::CovHatXy { c, coordinate: 0 },
        ));
    }
    let spec = ExperimentSpec {
        population: PopulationSource::Inline {
            units: pop.units().to_vec(),
        },
        design: DesignSpec::Srswor { n: 3 },
        estimators,
        ratios: vec![],
        covariances: vec![],
        replications: 0,
        seed: 0,
        mode: Mode::Enumerate,
        known_t_x: None,
        targets: Default::default(),
    };
    let report = run_with_population(&spec, &pop, &RunOptions::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for s in &report.series {
        // Targets are checked against the O(N²) reference path as well.
        let reference = match s.name.as_str() {
            "ht" => pop.t_y(),
            n if n.starts_with("sxx") => exact.sigma_xx[(0, 0)],
            _ => exact.sigma_xy[0],
        };
        let gap = (s.mean - reference).abs() / reference.abs().max(1.0);
        worst = worst.max(gap);
        if s.unbiased != Some(true) || gap > 1e-10 {
            return Err(format!("{}: mean {} vs {}", s.name, s.mean, reference));
        }
    }
    check(
        true,
        format!(
            "{} samples, c in {{0, 0.5, 1, {:.4}}}, worst relative gap {worst:.1e}",
            report.replications, cs[3]
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for (n_pop, n) in [(6, 3), (8, 4), (10, 3), (12, 5)] {
        let pop = recal::population::Population::from_columns(&vec![0.0; n_pop], &vec![vec![0.0]; n_pop])
            .map_err(|e| e.to_string())?;
        let design = Design::new(DesignSpec::Srswor { n }, &pop).map_err(|e| e.to_string())?;
        let c = recommended_c(&design);
        for i in 0..n_pop {
            for j in 0..n_pop {
                if i != j {
                    let v = pair_coefficient(&design, i, j, c).map_err(|e| e.to_string())?;
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    check(
        worst <= 1e-14,
        format!("largest off-diagonal coefficient {worst:.1e} over N/n in 6/3, 8/4, 10/3, 12/5"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let (mut worst_cal, mut worst_dual) = (0.0f64, 0.0f64);
    for k in 0..1000 {
        // GREG on arbitrary data with random q and targets.
        let inst = random_instance(&mut rng, false);
        let p = inst.pop.dim();
        let q: Vec<f64> = (0..inst.pop.len()).map(|_| rng.random_range(0.5..2.0)).collect();
        let target: Vec<f64> = inst
            .pop
            .t_x()
            .iter()
            .map(|t| t + rng.random_range(-5.0..5.0))
            .collect();
        let w = greg_weights(&inst.sample, &inst.design, &inst.pop, Some(&q), &target)
            .map_err(|e| format!("instance {k}: {e}"))?;
        let scale = calibration_scale(&inst.pop, &inst.design, &w.units, &w.weights);
        for r in w.calibration_residual(&inst.pop) {
            worst_cal = worst_cal.max(r.abs() / scale);
        }
        let beta_form = greg_estimate(&inst.sample, &inst.design, &inst.pop, Some(&q), &target)
            .map_err(|e| e.to_string())?;
        worst_dual = worst_dual.max(relative_gap(w.estimate(&inst.pop.y_values()), beta_form));

        // Optimal weights: centred covariates at any c, or c = 1 with
        // arbitrary totals.
        let (inst, c) = if k % 2 == 0 {
            let inst = random_instance(&mut rng, true);
            let c = [0.5, 0.8, 1.0, recommended_c(&inst.design)][rng.random_range(0..4)];
            (inst, c)
        } else {
            (random_instance(&mut rng, false), 1.0)
        };
        let t = inst.pop.t_x().to_vec();
        let w = optimal_weights(&inst.sample, &inst.design, &inst.pop, c, &t)
            .map_err(|e| format!("instance {k}: {e}"))?;
        let scale = calibration_scale(&inst.pop, &inst.design, &w.units, &w.weights);
        let res = w.calibration_residual(&inst.pop);
        for r in &res {
            worst_cal = worst_cal.max(r.abs() / scale);
        }
        let beta_form =
            optimal_estimate(&inst.sample, &inst.design, &inst.pop, c, &t).map_err(|e| e.to_string())?;
        worst_dual = worst_dual.max(relative_gap(w.estimate(&inst.pop.y_values()), beta_form));
        if worst_cal > 1e-8 || worst_dual > 1e-8 {
            return Err(format!(
                "instance {k} ({}, p={p}, c={c}): residual {res:?}, worst calibration {worst_cal:.1e}, worst duality {worst_dual:.1e}",
                inst.design.spec()
            ));
        }
    }
    check(
        true,
        format!("1000 instances x 2 weight systems, calibration {worst_cal:.1e}, duality {worst_dual:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let inst = random_instance(&mut rng, false);
        let q: Vec<f64> = (0..inst.pop.len()).map(|_| rng.random_range(0.5..2.0)).collect();
        let target: Vec<f64> = inst
            .pop
            .t_x()
            .iter()
            .map(|t| t * rng.random_range(0.9..1.1))
            .collect();
        let w = greg_weights(&inst.sample, &inst.design, &inst.pop, Some(&q), &target)
            .map_err(|e| format!("instance {k}: {e}"))?;
        let units = inst.sample.units();
        let x: Vec<Vec<f64>> = units.iter().map(|&u| inst.pop.unit(u).x.clone()).collect();
        let d: Vec<f64> = units.iter().map(|&u| inst.design.expansion(u)).collect();
        let qs: Vec<f64> = units.iter().map(|&u| q[u]).collect();
        let oracle = kkt_weights(&x, &d, &qs, &target);
        let size = oracle.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in w.weights.iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / size);
        }
    }
    check(
        worst <= 1e-8,
        format!("100 instances, largest weight gap {worst:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let pop = fixture("eight.csv");
    let design = Design::new(DesignSpec::Srswor { n: 4 }, &pop).map_err(|e| e.to_string())?;
    let beta0 = beta_o_true(&design, &pop).map_err(|e| e.to_string())?.beta[0];
    let h = 0.05 * beta0.abs().max(0.5);
    let grid: Vec<f64> = (0..21).map(|k| beta0 + (k as f64 - 10.3) * h).collect();
    let t = pop.t_x().to_vec();
    let mut variances = Vec::new();
    for &b in &grid {
        let m = enumeration_oracle(&design, 1_000, |s| {
            fixed_beta_estimate(s, &design, &pop, &[b], &t)
        })
        .map_err(|e| e.to_string())?;
        variances.push(m.variance);
    }
    let argmin = (0..21)
        .min_by(|&a, &b| variances[a].total_cmp(&variances[b]))
        .unwrap();
    let nearest = (0..21)
        .min_by(|&a, &b| (grid[a] - beta0).abs().total_cmp(&(grid[b] - beta0).abs()))
        .unwrap();
    check(
        argmin == nearest,
        format!(
            "beta0 = {beta0:.6}, grid minimiser {:.6} (index {argmin}), nearest grid point index {nearest}",
            grid[argmin]
        ),
    )
}

struct Runs {
    ex1: SimulationReport,
    ex2: [SimulationReport; 2],
    ex3: SimulationReport,
    timings: [Duration; 3],
}

fn timed<T>(f: impl FnOnce() -> recal::Result<T>) -> Result<(T, Duration), String> {
    let start = Instant::now();
    let value = f().map_err(|e| e.to_string())?;
    Ok((value, start.elapsed()))
}

fn run_examples(options: &RunOptions) -> Result<Runs, String> {
    let e2 = |k| Example2Params {
        cluster_size: k,
        ..Default::default()
    };
    let (ex1, t1) = timed(|| reproduce_example1(&Example1Params::default(), options))?;
    let (ex2, t2) = timed(|| {
        Ok([
            reproduce_example2(&e2(5), options)?,
            reproduce_example2(&e2(10), options)?,
        ])
    })?;
    let (ex3, t3) = timed(|| reproduce_example3(&Example3Params::default(), options))?;
    Ok(Runs {
        ex1,
        ex2,
        ex3,
        timings: [t1, t2, t3],
    })
}

fn criterion_6(r: &SimulationReport) -> Outcome {
    let beta = r.series("greg_beta").ok_or("missing greg_beta")?;
    let ratio = r.ratio("optimal", "greg").ok_or("missing ratio")?;
    check(
        (beta.mean - 0.5).abs() <= 0.03 && ratio.ratio < 0.05,
        format!(
            "mean beta_hat {:.5} (target 0.5), Var ratio {:.3e} (bound 0.05)",
            beta.mean, ratio.ratio
        ),
    )
}

fn criterion_7(r: &[SimulationReport; 2]) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (report, approx) in r.iter().zip([0.75, 0.5]) {
        let ratio = report
            .ratio("fixed_beta_0", "fixed_beta_lim")
            .ok_or("missing ratio")?;
        ok &= (ratio.ratio - approx).abs() <= 0.05;
        details.push(format!(
            "K={}: {:.4} +/- {:.4} (model {:.4}, approx {approx})",
            report.population.size / 5000,
            ratio.ratio,
            ratio.se,
            ratio.target.unwrap_or(f64::NAN)
        ));
    }
    check(ok, details.join("; "))
}

fn criterion_8(r: &SimulationReport) -> Outcome {
    let ratio = r.ratio("delta", "t_y1").ok_or("missing ratio")?;
    let var = r.series("t_y1").ok_or("missing t_y1")?;
    let target = r.targets["var_t_y1"];
    let ok = (ratio.ratio - 0.40).abs() <= 0.03 && (var.variance - target).abs() <= 3.0 * var.variance_se;
    check(
        ok,
        format!(
            "ratio {:.4} (target 0.40), Var(t_y1) {:.6e} vs {:.6e} ({:.2} MC SEs)",
            ratio.ratio,
            var.variance,
            target,
            (var.variance - target).abs() / var.variance_se
        ),
    )
}

fn serialise(r: &Runs) -> Vec<String> {
    [&r.ex1, &r.ex2[0], &r.ex2[1], &r.ex3]
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect()
}

fn criterion_10(first: &Runs) -> Outcome {
    let reference = serialise(first);
    let again = serialise(&run_examples(&RunOptions::default())?);
    let threads = serialise(&run_examples(&RunOptions {
        threads: Some(3),
        ..Default::default()
    })?);
    let same_seed = reference == again;
    let same_workers = reference == threads;
    check(
        same_seed && same_workers,
        format!(
            "same seed identical: {same_seed}, 3 workers vs default identical: {same_workers} ({} bytes)",
            reference.iter().map(String::len).sum::<usize>()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    for k in 0..100 {
        let inst = random_instance(&mut rng, false);
        let census = Design::new(DesignSpec::Census, &inst.pop).map_err(|e| e.to_string())?;
        let all = census.draw(&mut rng).map_err(|e| e.to_string())?;
        let c = [0.5, 1.0, recommended_c(&inst.design)][k % 3];
        let t = inst.pop.t_x().to_vec();
        let mode = TwoSampleCovariance::PlugIn {
            c1: c,
            c2: 1.0,
            centre: t.clone(),
        };
        let two = two_sample_estimate((&inst.sample, &inst.design), (&all, &census), &inst.pop, &mode)
            .map_err(|e| e.to_string())?;
        let one =
            optimal_estimate(&inst.sample, &inst.design, &inst.pop, c, &t).map_err(|e| e.to_string())?;
        if two.estimate.to_bits() != one.to_bits() {
            return Err(format!("instance {k}: {} vs {}", two.estimate, one));
        }
    }
    check(true, "100 instances bit-identical".into())
}

fn report(number: usize, name: &str, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = run();
    let elapsed = start.elapsed();
    let (ok, detail) = match outcome {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; took {elapsed:.2?}, limit {limit:?}")),
        Err(d) => (false, d),
    };
    println!(
        "{} criterion {number:>2} {name}: {detail} [{elapsed:.2?}]",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn main() {
    let secs = Duration::from_secs;
    let mut all = true;
    all &= report(1, "exact unbiasedness", secs(1), criterion_1);
    all &= report(2, "diagonal-only c", secs(1), criterion_2);
    all &= report(3, "calibration identities", secs(10), criterion_3);
    all &= report(4, "GREG QP oracle", secs(5), criterion_4);
    all &= report(5, "optimality of beta0", secs(5), criterion_5);

    match run_examples(&RunOptions::default()) {
        Ok(runs) => {
            let limits = [secs(60), secs(300), secs(300)];
            let within = |k: usize| -> Result<(), String> {
                if runs.timings[k] <= limits[k] {
                    Ok(())
                } else {
                    Err(format!("run took {:.2?}, limit {:?}", runs.timings[k], limits[k]))
                }
            };
            all &= report(6, "example 1", limits[0], || {
                within(0)?;
                criterion_6(&runs.ex1).map(|d| format!("{d}; run {:.2?}", runs.timings[0]))
            });
            all &= report(7, "example 2", limits[1], || {
                within(1)?;
                criterion_7(&runs.ex2).map(|d| format!("{d}; runs {:.2?}", runs.timings[1]))
            });
            all &= report(8, "example 3", limits[2], || {
                within(2)?;
                criterion_8(&runs.ex3).map(|d| format!("{d}; run {:.2?}", runs.timings[2]))
            });
            all &= report(9, "two-sample degeneracy", secs(5), criterion_9);
            all &= report(10, "determinism", secs(3600), || criterion_10(&runs));
        }
        Err(e) => {
            for (n, name) in [(6, "example 1"), (7, "example 2"), (8, "example 3")] {
                println!("FAIL criterion {n:>2} {name}: {e}");
            }
            all = false;
            all &= report(9, "two-sample degeneracy", secs(5), criterion_9);
            println!("FAIL criterion 10 determinism: examples did not run");
        }
    }
    if !all {
        std::process::exit(1);
    }
}
