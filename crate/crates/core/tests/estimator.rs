use std::collections::BTreeMap;

use dwglm::dtr::{optimal_action, regret};
use dwglm::links::expit;
use dwglm::rng::{stream, Purpose};
use dwglm::{LongitudinalDataset, StageData, StageModelSpec, Term};
use rand::Rng;
use rand_distr::StandardNormal;

use dwglm::estimators::FitStep;
use dwglm::links::clamp_probability;
use dwglm::simulation::{
    replication_dataset, Scenario, Study1Params, Study2aCase, Study2aParams, StudyDesign,
};
use dwglm::{estimate_dtr, EstimatorConfig, Method};

fn study1(n: usize, psi: [f64; 2]) -> StudyDesign {
    StudyDesign::Study1 {
        params: Study1Params {
            n,
            psi,
            ..Default::default()
        },
        scenario: Scenario::BothCorrect,
    }
}

/// Stage-1 estimates from replications that converged, plus the failure count.
fn replicate_estimates(
    design: &StudyDesign,
    specs: &[StageModelSpec],
    reps: usize,
) -> (Vec<Vec<f64>>, usize) {
    let mut est = Vec::new();
    let mut failed = 0;
    for r in 0..reps {
        let data = replication_dataset(design, 77, r);
        match estimate_dtr(&data, specs, &EstimatorConfig::default()) {
            Ok(e) => est.push(e.stage(1).psi_hat.clone()),
            Err(_) => failed += 1,
        }
    }
    (est, failed)
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn single_stage_recovers_truth() {
    let design = study1(2000, [-1.0, 2.0]);
    let (est, failed) = replicate_estimates(&design, &design.specs(), 100);
    assert!(failed <= 20, "{failed} of 100 replications failed");
    for (k, truth) in [-1.0, 2.0].iter().enumerate() {
        let (mean, sd) = mean_sd(est.iter().map(|e| e[k]));
        let mc_error = 3.0 * sd / (est.len() as f64).sqrt();
        assert!(
            (mean - truth).abs() < mc_error,
            "psi_{k}: mean {mean}, allowed {mc_error}"
        );
    }
}

/// Randomized single-stage trial: `a ~ Bernoulli(1/2)`, `x ~ N(0, 1)`,
/// `logit P(Y=1) = 0.2 + 0.5x` regardless of treatment.
fn null_trial(n: usize, seed: u64) -> LongitudinalDataset {
    let mut rng = stream(seed, Purpose::Data, 0, 0);
    let x: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let a: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
    let y: Vec<u8> = x
        .iter()
        .map(|&v| u8::from(rng.random::<f64>() < expit(0.2 + 0.5 * v)))
        .collect();
    LongitudinalDataset {
        subject_ids: (1..=n).map(|i| i.to_string()).collect(),
        treatment_name: "a".into(),
        baseline: BTreeMap::new(),
        stages: vec![StageData {
            treatment: a,
            covariates: BTreeMap::from([("x".to_string(), x)]),
        }],
        outcome: y,
        design_weights: None,
    }
}

#[test]
fn null_effect_is_estimated_near_zero() {
    let spec = StageModelSpec {
        treatment_free: vec![Term::linear("x")],
        blip: vec![Term::linear("x")],
        treatment: vec![Term::linear("x")],
    };
    let est: Vec<Vec<f64>> = (0..100)
        .map(|r| {
            let data = null_trial(2000, r);
            estimate_dtr(
                &data,
                std::slice::from_ref(&spec),
                &EstimatorConfig::default(),
            )
            .unwrap()
            .stage(1)
            .psi_hat
            .clone()
        })
        .collect();
    for k in 0..2 {
        let mean_abs = est.iter().map(|e| e[k].abs()).sum::<f64>() / est.len() as f64;
        assert!(mean_abs < 0.1, "mean |psi_{k}| = {mean_abs}");
    }
}

#[test]
fn optimally_treated_subjects_keep_stage_k_probability() {
    let design = StudyDesign::Study2a {
        params: Study2aParams {
            n: 800,
            ..Default::default()
        },
        case: Study2aCase::One,
    };
    let specs = design.specs();
    let data = replication_dataset(&design, 5, 0);
    let est = estimate_dtr(&data, &specs, &EstimatorConfig::default()).unwrap();
    let (d2, _) = data.stage_design(&specs[1], 2).unwrap();
    let psi2 = &est.stage(2).psi_hat;
    let probs = est.stage(1).pseudo_outcome_probabilities.as_ref().unwrap();
    let (mut same, mut shifted) = (0, 0);
    for (i, &prob) in probs.iter().enumerate() {
        let h: Vec<f64> = d2.blip().row(i).iter().copied().collect();
        let p = clamp_probability(est.fitted_probabilities[i]);
        if regret(psi2, &h, data.stages[1].treatment[i]).unwrap() == 0.0 {
            assert_eq!(prob, p);
            same += 1;
        } else {
            assert!(prob > p);
            shifted += 1;
        }
    }
    assert!(same > 0 && shifted > 0);
}

#[test]
fn max_q_regret_consistency() {
    let design = study1(500, [-1.0, 2.0]);
    let data = replication_dataset(&design, 3, 0);
    let spec = &design.specs()[0];
    let est = estimate_dtr(&data, &design.specs(), &EstimatorConfig::default()).unwrap();
    let (d, _) = data.stage_design(spec, 1).unwrap();
    let psi = &est.stage(1).psi_hat;
    let beta = &est.beta_hat_k;
    for i in 0..d.n_rows() {
        let h: Vec<f64> = d.blip().row(i).iter().copied().collect();
        let opt = optimal_action(psi, &h).unwrap();
        for a in [0, 1] {
            let gap = d.linear_predictor(i, opt, beta, psi) - d.linear_predictor(i, a, beta, psi);
            assert!((gap - regret(psi, &h, a).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn method_fit_sequences() {
    let design = StudyDesign::Study1 {
        params: Study1Params {
            n: 600,
            ..Default::default()
        },
        scenario: Scenario::TreatmentFreeWrong,
    };
    let data = replication_dataset(&design, 8, 0);
    for method in Method::ALL {
        let config = EstimatorConfig {
            method,
            ..Default::default()
        };
        let est = estimate_dtr(&data, &design.specs(), &config).unwrap();
        let steps: Vec<FitStep> = est.stage(1).fits.iter().map(|f| f.step).collect();
        match method {
            Method::M2 => assert_eq!(steps, [FitStep::Initial, FitStep::Balanced]),
            _ => assert_eq!(steps, [FitStep::Initial]),
        }
        assert_eq!(est.stage(1).alpha_hat.is_some(), method != Method::M0);
    }
}

#[test]
fn same_seed_same_estimate() {
    let design = StudyDesign::Study2a {
        params: Study2aParams {
            n: 300,
            ..Default::default()
        },
        case: Study2aCase::Two,
    };
    let data = replication_dataset(&design, 1, 0);
    let config = EstimatorConfig {
        seed: 42,
        ..Default::default()
    };
    let a = estimate_dtr(&data, &design.specs(), &config).unwrap();
    let b = estimate_dtr(&data, &design.specs(), &config).unwrap();
    assert_eq!(a, b);
    let c = estimate_dtr(
        &data,
        &design.specs(),
        &EstimatorConfig { seed: 43, ..config },
    )
    .unwrap();
    assert_ne!(a.stage(1).psi_hat, c.stage(1).psi_hat);
}
