//! Invariant suite behind `dwglm check`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::dtr::{blip, optimal_action, pseudo_outcome_probability, regret};
use crate::estimators::{estimate_dtr, EstimatorConfig, Method};
use crate::io::{read_dataset_from, write_long_csv, AnalysisConfig, ColumnNames};
use crate::links::{clamp_probability, Link};
use crate::rng::{stream, Purpose};
use crate::simulation::{
    replication_dataset, run_simulation, study2b_specs, Scenario, SimulationSettings, Study1Params,
    Study2bParams, StudyDesign,
};
use crate::solver::{
    check_beta_star_uniqueness, solve_estimating_equations, Definiteness, DesignMatrix,
    SolverOptions,
};
use crate::weights::{dwglm_weights, overlap_weights};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Largest |g(g⁻¹(η)) − η| over 1000 draws of η (from `[−10, 10]`, or
/// `(0, 1)` for the identity link), and the η attaining it.
pub fn link_round_trip_error(link: Link, seed: u64) -> (f64, f64) {
    let mut rng = stream(seed, Purpose::Check, 1, link as u64);
    let mut worst = (0.0, f64::NAN);
    for _ in 0..1000 {
        let eta = match link {
            Link::Identity => rng.random_range(1e-9..1.0 - 1e-9),
            _ => rng.random_range(-10.0..10.0),
        };
        let err = match link.g(link.inverse(eta)) {
            Ok(v) => (v - eta).abs(),
            Err(_) => f64::INFINITY,
        };
        if err.is_nan() || err >= worst.0 {
            worst = (err, eta);
        }
    }
    worst
}

/// Largest relative error of a central difference (step 1e-6) of g⁻¹
/// against g⁻¹′ over 200 draws of η from `[−6, 6]`.
pub fn link_derivative_error(link: Link, seed: u64) -> (f64, f64) {
    let mut rng = stream(seed, Purpose::Check, 2, link as u64);
    let h = 1e-6;
    let mut worst = (0.0, f64::NAN);
    for _ in 0..200 {
        let eta: f64 = rng.random_range(-6.0..6.0);
        let fd = (link.inverse(eta + h) - link.inverse(eta - h)) / (2.0 * h);
        let exact = link.inverse_derivative(eta);
        let rel = (fd - exact).abs() / exact.abs();
        if rel.is_nan() || rel >= worst.0 {
            worst = (rel, eta);
        }
    }
    worst
}

fn link_checks(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for link in Link::ALL {
        let (err, at) = link_round_trip_error(link, seed);
        out.push(CheckResult::new(
            format!("link {link}: round trip < 1e-8"),
            err < 1e-8,
            format!("max error {err:.3e} at eta = {at:.4}"),
        ));
        let (rel, at) = link_derivative_error(link, seed);
        out.push(CheckResult::new(
            format!("link {link}: finite difference rel. error < 1e-5"),
            rel < 1e-5,
            format!("max relative error {rel:.3e} at eta = {at:.4}"),
        ));
        let grid: Vec<f64> = (0..=2000).map(|i| -40.0 + 0.04 * i as f64).collect();
        let monotone = grid
            .windows(2)
            .all(|w| link.inverse(w[0]) <= link.inverse(w[1]));
        let positive = grid.iter().all(|&e| link.inverse_derivative(e) > 0.0);
        out.push(CheckResult::new(
            format!("link {link}: monotone inverse, positive derivative"),
            monotone && positive,
            format!("monotone {monotone}, positive derivative {positive} on [-40, 40]"),
        ));
    }
    out
}

fn regret_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = stream(seed, Purpose::Check, 3, 0);
    let (mut negative, mut identity, mut zero_rule, mut scaling) = (0, 0, 0, 0);
    let mut pseudo = 0;
    let trials = 10_000;
    for _ in 0..trials {
        let p = rng.random_range(1..5);
        let psi: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h: Vec<f64> = std::iter::once(1.0)
            .chain((1..p).map(|_| rng.random_range(-3.0..3.0)))
            .collect();
        let a = u8::from(rng.random::<bool>());
        let mu = regret(&psi, &h, a).expect("matching lengths");
        let opt = optimal_action(&psi, &h).expect("matching lengths");
        if mu < 0.0 {
            negative += 1;
        }
        let gap = blip(&psi, &h, opt).unwrap() - blip(&psi, &h, a).unwrap();
        if mu != gap {
            identity += 1;
        }
        if (mu == 0.0) != (a == opt) {
            zero_rule += 1;
        }
        let c: f64 = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = psi.iter().map(|v| v * c).collect();
        if optimal_action(&scaled, &h).unwrap() != opt {
            scaling += 1;
        }
        let prob: f64 = rng.random_range(0.0..1.0);
        for link in Link::ALL {
            let back = pseudo_outcome_probability(prob, 0.0, link);
            if (back - clamp_probability(prob)).abs() > 1e-9 {
                pseudo += 1;
            }
        }
    }
    vec![
        CheckResult::new(
            "regret non-negative",
            negative == 0,
            format!("{negative} of {trials} negative"),
        ),
        CheckResult::new(
            "blip/regret identity",
            identity == 0 && zero_rule == 0,
            format!(
                "{identity} identity violations, {zero_rule} zero-regret mismatches in {trials}"
            ),
        ),
        CheckResult::new(
            "optimal action invariant to positive scaling",
            scaling == 0,
            format!("{scaling} of {trials} changed"),
        ),
        CheckResult::new(
            "pseudo-outcome identity at zero regret",
            pseudo == 0,
            format!("{pseudo} violations over all links"),
        ),
    ]
}

/// Largest |(1−π)w(0)κ(0) − πw(1)κ(1)| over `trials` random tuples.
pub fn balancing_identity_error(trials: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, Purpose::Check, 4, 0);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let link = Link::ALL[t % Link::ALL.len()];
        let pi: f64 = rng.random_range(1e-3..1.0 - 1e-3);
        let x: f64 = rng.random_range(-2.0..2.0);
        let beta = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let psi = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let row = DMatrix::from_row_slice(2, 2, &[1.0, x, 1.0, x]);
        let design = DesignMatrix::new(row.clone(), row, vec![0, 1]).expect("valid design");
        let w = dwglm_weights(&[0, 1], &[pi, pi], &design, &beta, &psi, link).values;
        let k0 = link.inverse_derivative(beta[0] + beta[1] * x);
        let k1 = link.inverse_derivative(beta[0] + beta[1] * x + psi[0] + psi[1] * x);
        worst = worst.max(((1.0 - pi) * w[0] * k0 - pi * w[1] * k1).abs());
    }
    worst
}

fn weight_checks(seed: u64) -> Vec<CheckResult> {
    let err = balancing_identity_error(10_000, seed);
    let mut rng = stream(seed, Purpose::Check, 4, 1);
    let mut dwols = 0.0f64;
    for _ in 0..10_000 {
        let pi: f64 = rng.random_range(1e-3..1.0 - 1e-3);
        let w = overlap_weights(&[0, 1], &[pi, pi]).values;
        dwols = dwols.max(((1.0 - pi) * w[0] - pi * w[1]).abs());
    }
    vec![
        CheckResult::new(
            "dWGLM balancing criterion < 1e-12",
            err < 1e-12,
            format!("max error {err:.3e} over 10000 tuples"),
        ),
        CheckResult::new(
            "overlap-weight criterion < 1e-15",
            dwols < 1e-15,
            format!("max error {dwols:.3e}"),
        ),
    ]
}

/// A random two-arm logistic dataset with tailoring covariate `x`.
pub fn random_design<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (DesignMatrix, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Vec<u8> = x
        .iter()
        .map(|&v| u8::from(rng.random::<f64>() < crate::links::expit(0.5 * v)))
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eta = -0.3 + 0.8 * x[i] - 0.5 * z[i] + f64::from(a[i]) * (0.4 - 0.6 * x[i]);
            f64::from(u8::from(rng.random::<f64>() < crate::links::expit(eta)))
        })
        .collect();
    let tf = DMatrix::from_fn(n, 3, |i, k| [1.0, x[i], z[i]][k]);
    let bl = DMatrix::from_fn(n, 2, |i, k| [1.0, x[i]][k]);
    (DesignMatrix::new(tf, bl, a).expect("valid design"), y)
}

fn solver_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = stream(seed, Purpose::Check, 5, 0);
    let opts = SolverOptions::default();
    let (mut worst, mut failures, mut not_definite) = (0.0f64, 0, 0);
    let datasets = 20;
    for d in 0..datasets {
        let (design, y) = random_design(&mut rng, 200);
        let link = Link::ALL[d % 3];
        let w: Vec<f64> = (0..200).map(|_| rng.random_range(0.1..2.0)).collect();
        let base = match solve_estimating_equations(&design, &y, &w, link, &opts) {
            Ok(f) => f,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        if check_beta_star_uniqueness(&design, &w, link, &base.beta_hat)
            != Definiteness::NegativeDefinite
        {
            not_definite += 1;
        }
        for c in [1e-3, 7.0, 1e3] {
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            match solve_estimating_equations(&design, &y, &scaled, link, &opts) {
                Ok(f) => {
                    let diff = base
                        .beta_hat
                        .iter()
                        .chain(&base.psi_hat)
                        .zip(f.beta_hat.iter().chain(&f.psi_hat))
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    worst = worst.max(diff);
                }
                Err(_) => failures += 1,
            }
        }
    }
    vec![
        CheckResult::new(
            "solver invariant to weight scaling < 1e-8",
            failures == 0 && worst < 1e-8,
            format!("max coefficient change {worst:.3e}, {failures} failed fits"),
        ),
        CheckResult::new(
            "negative-definite diagnostic on random fits",
            not_definite == 0 && failures == 0,
            format!("{not_definite} of {datasets} fits not negative definite"),
        ),
    ]
}

fn estimator_diagnostic_check(seed: u64) -> CheckResult {
    let design = StudyDesign::Study1 {
        params: Study1Params {
            n: 500,
            ..Default::default()
        },
        scenario: Scenario::TreatmentFreeWrong,
    };
    let data = replication_dataset(&design, seed, 0);
    let (mut fits, mut bad, mut errors) = (0, 0, 0);
    for method in Method::ALL {
        let config = EstimatorConfig {
            method,
            seed,
            ..Default::default()
        };
        match estimate_dtr(&data, &design.specs(), &config) {
            Ok(est) => {
                for d in est.stages.iter().flat_map(|s| &s.fits) {
                    fits += 1;
                    if d.hessian != Definiteness::NegativeDefinite {
                        bad += 1;
                    }
                }
            }
            Err(_) => errors += 1,
        }
    }
    CheckResult::new(
        "negative-definite diagnostic at every converged estimator fit",
        bad == 0 && errors == 0 && fits > 0,
        format!("{bad} of {fits} fits not negative definite, {errors} estimator errors"),
    )
}

fn reproducibility_check(seed: u64) -> CheckResult {
    let settings = SimulationSettings::new(
        StudyDesign::Study1 {
            params: Study1Params {
                n: 300,
                ..Default::default()
            },
            scenario: Scenario::BothCorrect,
        },
        Method::ALL.to_vec(),
        12,
        seed,
    );
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(|| run_simulation(&settings))
    };
    let detail;
    let passed = match (run(1), run(4), run(4)) {
        (Ok(a), Ok(b), Ok(c)) => {
            let same = |x: &crate::simulation::SimulationResult,
                        y: &crate::simulation::SimulationResult| {
                x.replicates.len() == y.replicates.len()
                    && x.replicates.iter().zip(&y.replicates).all(|(p, q)| {
                        p.estimate.to_bits() == q.estimate.to_bits() && p.term == q.term
                    })
                    && x.failures == y.failures
            };
            let ok = same(&a, &b) && same(&b, &c);
            detail = format!(
                "{} estimates compared across 1 and 4 threads",
                a.replicates.len()
            );
            ok
        }
        _ => {
            detail = "simulation failed".to_string();
            false
        }
    };
    CheckResult::new("seeded study1 run is bit-reproducible", passed, detail)
}

fn csv_round_trip_check(seed: u64) -> CheckResult {
    let mut compared = 0;
    let mut mismatches = Vec::new();
    let cases: [(StudyDesign, Vec<crate::model::StageModelSpec>); 2] = [
        {
            let d = StudyDesign::Study1 {
                params: Study1Params {
                    n: 400,
                    ..Default::default()
                },
                scenario: Scenario::TreatmentFreeWrong,
            };
            let specs = d.specs();
            (d, specs)
        },
        (
            StudyDesign::Study2b {
                params: Study2bParams {
                    n: 400,
                    theta: [0.0, 0.2, 0.0, -0.5, -0.1, 0.2, 0.25, 0.5, 0.35],
                    ..Default::default()
                },
                scenario: Scenario::TreatmentFreeWrong,
            },
            study2b_specs().to_vec(),
        ),
    ];
    for (design, specs) in cases {
        let data = replication_dataset(&design, seed, 1);
        let mut buf = Vec::new();
        let mut config = AnalysisConfig::new(specs.clone());
        config.columns = ColumnNames::default();
        if let Err(e) = write_long_csv(&data, &config.columns, &mut buf) {
            mismatches.push(format!("{}: write failed: {e}", design.name()));
            continue;
        }
        let parsed = match read_dataset_from(buf.as_slice(), &config) {
            Ok(p) => p,
            Err(e) => {
                mismatches.push(format!("{}: parse failed: {e}", design.name()));
                continue;
            }
        };
        for method in Method::ALL {
            let cfg = EstimatorConfig {
                method,
                seed,
                replicates: 5,
                ..Default::default()
            };
            let direct = estimate_dtr(&data, &specs, &cfg).map(|e| e.stages);
            let via_csv = estimate_dtr(&parsed, &specs, &cfg).map(|e| e.stages);
            compared += 1;
            let same = match (&direct, &via_csv) {
                (Ok(a), Ok(b)) => a.iter().zip(b).all(|(s, t)| {
                    s.psi_hat.len() == t.psi_hat.len()
                        && s.psi_hat
                            .iter()
                            .zip(&t.psi_hat)
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                }),
                (Err(a), Err(b)) => a.to_string() == b.to_string(),
                _ => false,
            };
            if !same {
                mismatches.push(format!("{} {method}", design.name()));
            }
        }
    }
    CheckResult::new(
        "CSV round trip reproduces estimates bit-for-bit",
        mismatches.is_empty() && compared > 0,
        if mismatches.is_empty() {
            format!("{compared} estimator runs compared")
        } else {
            format!("mismatches: {}", mismatches.join(", "))
        },
    )
}

/// Runs every invariant check with draws derived from `seed`.
pub fn run_property_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = link_checks(seed);
    out.extend(regret_checks(seed));
    out.extend(weight_checks(seed));
    out.extend(solver_checks(seed));
    out.push(estimator_diagnostic_check(seed));
    out.push(reproducibility_check(seed));
    out.push(csv_round_trip_check(seed));
    out
}
