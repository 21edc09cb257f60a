//! Backward-induction estimators for binary-outcome treatment regimes.
//!
//! Three methods share one loop over stages `K, K−1, …, 1`:
//!
//! * **M0** (Q-learning): unweighted GLM of the (pseudo-)outcome.
//! * **M1**: GLM weighted by overlap weights `|a − π̂|`.
//! * **M2** (dWGLM): the M1 fit gives `(β̂ᵒˡᵈ, ψ̂ᵒˡᵈ)`, from which the adjustment
//!   factor κ and the balancing weights `|a − π̂|·κ(1 − a, h)` are built; a
//!   second weighted GLM gives the stage estimate.
//!
//! Before stage `j < K` is fitted, each subject's pseudo-outcome probability
//! is `g⁻¹(g(p̂_K) + Σ_{k>j} μ̂_k)` where `p̂_K` is the stage-K fitted
//! probability at the observed history and the regrets use the already
//! estimated blips. `R` Bernoulli pseudo-outcome vectors are drawn and fitted
//! independently, and the stage estimate is their average.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::dtr::{draw_replicate, pseudo_outcome_probability, regret, TrajectoryStage};
use crate::error::{Error, Result};
use crate::links::Link;
use crate::model::StageModelSpec;
use crate::solver::{
    solve_estimating_equations, Definiteness, DesignMatrix, SolverOptions, WglmFit,
};
use crate::weights::{dwglm_weights, fit_propensity, overlap_weights, WeightKind, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Q-learning: no weights.
    M0,
    /// Overlap (dWOLS) weights.
    M1,
    /// dWGLM balancing weights.
    M2,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::M0, Method::M1, Method::M2];

    pub fn weight_mode(self) -> WeightKind {
        match self {
            Method::M0 => WeightKind::None,
            Method::M1 => WeightKind::Dwols,
            Method::M2 => WeightKind::Dwglm,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::M0 => "m0",
            Method::M1 => "m1",
            Method::M2 => "m2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m0" | "none" | "qlearning" => Ok(Method::M0),
            "m1" | "dwols" => Ok(Method::M1),
            "m2" | "dwglm" => Ok(Method::M2),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected m0, m1 or m2)"
            ))),
        }
    }
}

pub const DEFAULT_REPLICATES: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    pub link: Link,
    /// Pseudo-outcome replicates `R` per stage below `K`.
    pub replicates: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    /// Share of replicates that must converge for a stage to succeed.
    pub min_converged_fraction: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: Method::M2,
            link: Link::Logit,
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            solver: SolverOptions::default(),
            min_converged_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStep {
    /// The only fit (M0, M1) or the first of two (M2).
    Initial,
    /// The M2 refit with balancing weights.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub replicate: usize,
    pub step: FitStep,
    pub iterations: usize,
    pub residual_norm: f64,
    pub hessian: Definiteness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEstimate {
    /// 1-based stage index.
    pub stage: usize,
    pub blip_terms: Vec<String>,
    pub treatment_free_terms: Vec<String>,
    /// Mean of the converged replicate estimates.
    pub psi_hat: Vec<f64>,
    pub psi_replicates: Vec<Vec<f64>>,
    pub beta_replicates: Vec<Vec<f64>>,
    pub alpha_hat: Option<Vec<f64>>,
    pub replicates: usize,
    pub failed_replicates: Vec<FailedReplicate>,
    pub fits: Vec<FitDiagnostics>,
    /// Success probabilities the pseudo-outcomes were drawn from (stages < K).
    #[serde(skip)]
    pub pseudo_outcome_probabilities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtrEstimate {
    pub method: Method,
    pub link: Link,
    /// Stage estimates ordered 1..=K.
    pub stages: Vec<StageEstimate>,
    pub beta_hat_k: Vec<f64>,
    /// `p̂_K` at each subject's observed history and final treatment.
    #[serde(skip)]
    pub fitted_probabilities: Vec<f64>,
}

impl DtrEstimate {
    pub fn stage(&self, stage: usize) -> &StageEstimate {
        &self.stages[stage - 1]
    }

    /// `prescribe a_j = 1 if ψ̂ᵀh > 0`, one line per stage.
    pub fn rule_descriptions(&self) -> Vec<String> {
        self.stages
            .iter()
            .map(|s| {
                let mut expr = String::new();
                for (k, (name, psi)) in s.blip_terms.iter().zip(&s.psi_hat).enumerate() {
                    let mag = format!("{:.4}", psi.abs());
                    let sign = if *psi < 0.0 { "-" } else { "+" };
                    match (k, name.as_str()) {
                        (0, crate::model::INTERCEPT) => {
                            expr.push_str(&format!("{}{mag}", if *psi < 0.0 { "-" } else { "" }))
                        }
                        (0, _) => expr.push_str(&format!(
                            "{}{mag}*{name}",
                            if *psi < 0.0 { "-" } else { "" }
                        )),
                        _ => expr.push_str(&format!(" {sign} {mag}*{name}")),
                    }
                }
                format!(
                    "stage {} ({}): prescribe a_{} = 1 if {expr} > 0; otherwise a_{} = 0",
                    s.stage, self.method, s.stage, s.stage
                )
            })
            .collect()
    }
}

/// `g⁻¹(β̂ᵀhᵝ + a·ψ̂ᵀhᵠ)`.
pub fn q_function_value(fit: &WglmFit, h: &TrajectoryStage, a: u8, link: Link) -> f64 {
    let mut eta: f64 = fit.beta_hat.iter().zip(&h.h_beta).map(|(b, x)| b * x).sum();
    if a == 1 {
        eta += fit
            .psi_hat
            .iter()
            .zip(&h.h_psi)
            .map(|(p, x)| p * x)
            .sum::<f64>();
    }
    link.inverse(eta)
}

struct ReplicateFit {
    beta: Vec<f64>,
    psi: Vec<f64>,
    diagnostics: Vec<FitDiagnostics>,
}

struct StageInputs<'a> {
    design: &'a DesignMatrix,
    balance: Option<(&'a [f64], Vec<f64>)>,
    design_weights: Option<&'a [f64]>,
    config: &'a EstimatorConfig,
}

impl StageInputs<'_> {
    fn fit(&self, y: &[f64], replicate: usize) -> Result<ReplicateFit> {
        let n = self.design.n_rows();
        let cfg = self.config;
        let initial_weights = match &self.balance {
            None => WeightVector::unit(n),
            Some((_, overlap)) => WeightVector {
                values: overlap.clone(),
                kind: WeightKind::Dwols,
            },
        }
        .with_design(self.design_weights);
        let first = solve_estimating_equations(
            self.design,
            y,
            &initial_weights.values,
            cfg.link,
            &cfg.solver,
        )?;
        let mut diagnostics = vec![diag(replicate, FitStep::Initial, &first)];
        let fit = match (cfg.method, &self.balance) {
            (Method::M2, Some((pi_hat, _))) => {
                let a = self.design.treatment();
                let w = dwglm_weights(
                    a,
                    pi_hat,
                    self.design,
                    &first.beta_hat,
                    &first.psi_hat,
                    cfg.link,
                )
                .with_design(self.design_weights);
                let second =
                    solve_estimating_equations(self.design, y, &w.values, cfg.link, &cfg.solver)?;
                diagnostics.push(diag(replicate, FitStep::Balanced, &second));
                second
            }
            _ => first,
        };
        Ok(ReplicateFit {
            beta: fit.beta_hat,
            psi: fit.psi_hat,
            diagnostics,
        })
    }
}

fn diag(replicate: usize, step: FitStep, fit: &WglmFit) -> FitDiagnostics {
    FitDiagnostics {
        replicate,
        step,
        iterations: fit.iterations,
        residual_norm: fit.residual_norm,
        hessian: fit.hessian,
    }
}

/// Estimate the blip parameters of every stage by backward induction.
pub fn estimate_dtr(
    dataset: &LongitudinalDataset,
    specs: &[StageModelSpec],
    config: &EstimatorConfig,
) -> Result<DtrEstimate> {
    dataset.validate()?;
    let k_stages = dataset.n_stages();
    if specs.len() != k_stages {
        return Err(Error::Config(format!(
            "{} stage models for a {k_stages}-stage dataset",
            specs.len()
        )));
    }
    if config.replicates == 0 {
        return Err(Error::Config(
            "at least one pseudo-outcome replicate is required".into(),
        ));
    }
    let n = dataset.n_subjects();
    let design_weights = dataset.design_weights.as_deref();

    let mut stages: Vec<Option<StageEstimate>> = vec![None; k_stages];
    let mut later_regrets = vec![0.0; n];
    let mut fitted_k = Vec::new();
    let mut beta_hat_k = Vec::new();

    for stage in (1..=k_stages).rev() {
        let spec = &specs[stage - 1];
        let (design, x_alpha) = dataset
            .stage_design(spec, stage)
            .map_err(|e| e.at_stage(stage, None))?;

        let propensity = if config.method == Method::M0 {
            None
        } else {
            Some(
                fit_propensity(&x_alpha, design.treatment(), design_weights, &config.solver)
                    .map_err(|e| e.at_stage(stage, None))?,
            )
        };
        let overlap = propensity
            .as_ref()
            .map(|p| overlap_weights(design.treatment(), &p.fitted).values);
        let inputs = StageInputs {
            design: &design,
            balance: propensity
                .as_ref()
                .zip(overlap)
                .map(|(p, o)| (p.fitted.as_slice(), o)),
            design_weights,
            config,
        };

        let (estimate, probabilities) = if stage == k_stages {
            let y: Vec<f64> = dataset.outcome.iter().map(|&v| f64::from(v)).collect();
            let fit = inputs.fit(&y, 0).map_err(|e| e.at_stage(stage, None))?;
            fitted_k = (0..n)
                .map(|i| {
                    config.link.inverse(design.linear_predictor(
                        i,
                        design.treatment()[i],
                        &fit.beta,
                        &fit.psi,
                    ))
                })
                .collect();
            beta_hat_k = fit.beta.clone();
            (
                StageEstimate {
                    stage,
                    blip_terms: spec.blip_names(),
                    treatment_free_terms: spec.treatment_free_names(),
                    psi_hat: fit.psi.clone(),
                    psi_replicates: vec![fit.psi],
                    beta_replicates: vec![fit.beta],
                    alpha_hat: propensity.map(|p| p.alpha_hat),
                    replicates: 1,
                    failed_replicates: Vec::new(),
                    fits: fit.diagnostics,
                    pseudo_outcome_probabilities: None,
                },
                None,
            )
        } else {
            let probabilities: Vec<f64> = fitted_k
                .iter()
                .zip(&later_regrets)
                .map(|(&p, &mu)| pseudo_outcome_probability(p, mu, config.link))
                .collect();
            let results: Vec<Result<ReplicateFit>> = (0..config.replicates)
                .into_par_iter()
                .map(|r| {
                    let draws = draw_replicate(&probabilities, config.seed, stage, r);
                    let y: Vec<f64> = draws.iter().map(|&v| f64::from(v)).collect();
                    inputs.fit(&y, r)
                })
                .collect();
            let estimate = average_replicates(stage, spec, results, config)?;
            (
                StageEstimate {
                    alpha_hat: propensity.map(|p| p.alpha_hat),
                    ..estimate
                },
                Some(probabilities),
            )
        };

        if stage > 1 {
            let blip = dataset.model_matrix(&spec.blip, stage)?;
            let a = design.treatment();
            for (i, mu) in later_regrets.iter_mut().enumerate() {
                let h: Vec<f64> = blip.row(i).iter().copied().collect();
                *mu += regret(&estimate.psi_hat, &h, a[i])?;
            }
        }
        stages[stage - 1] = Some(StageEstimate {
            pseudo_outcome_probabilities: probabilities,
            ..estimate
        });
    }

    Ok(DtrEstimate {
        method: config.method,
        link: config.link,
        stages: stages
            .into_iter()
            .map(|s| s.expect("every stage visited"))
            .collect(),
        beta_hat_k,
        fitted_probabilities: fitted_k,
    })
}

fn average_replicates(
    stage: usize,
    spec: &StageModelSpec,
    results: Vec<Result<ReplicateFit>>,
    config: &EstimatorConfig,
) -> Result<StageEstimate> {
    let total = results.len();
    let mut psi_replicates = Vec::new();
    let mut beta_replicates = Vec::new();
    let mut fits = Vec::new();
    let mut failed = Vec::new();
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(fit) => {
                psi_replicates.push(fit.psi);
                beta_replicates.push(fit.beta);
                fits.extend(fit.diagnostics);
            }
            Err(e) => failed.push(FailedReplicate {
                replicate: r,
                error: e.to_string(),
            }),
        }
    }
    let converged = psi_replicates.len();
    let needed = (config.min_converged_fraction * total as f64).ceil() as usize;
    if converged == 0 || converged < needed {
        return Err(Error::AllReplicatesFailed {
            stage,
            converged,
            total,
        });
    }
    let p = psi_replicates[0].len();
    let psi_hat = (0..p)
        .map(|k| psi_replicates.iter().map(|v| v[k]).sum::<f64>() / converged as f64)
        .collect();
    Ok(StageEstimate {
        stage,
        blip_terms: spec.blip_names(),
        treatment_free_terms: spec.treatment_free_names(),
        psi_hat,
        psi_replicates,
        beta_replicates,
        alpha_hat: None,
        replicates: total,
        failed_replicates: failed,
        fits,
        pseudo_outcome_probabilities: None,
    })
}
