//! Simulation studies: data-generating processes, misspecification
//! scenarios, the first-stage truth for Study 2b and a Monte Carlo runner.
//!
//! Every continuous covariate that enters a `log|x|` term is redrawn when it
//! is exactly zero. Derived columns (`log_abs_x`, `cos_pi_x`, `x_sq`,
//! `x_cube`, `sin_x`, `phi1`, `phi2`) are stored next to the raw covariate so
//! model terms can reference them by name.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, StageData};
use crate::error::{Error, Result};
use crate::estimators::{estimate_dtr, EstimatorConfig, Method, DEFAULT_REPLICATES};
use crate::links::{cos_pi, expit, positive_part, Link};
use crate::model::{StageModelSpec, Term};
use crate::rng::{stream, Purpose};
use crate::solver::SolverOptions;

pub const TREATMENT: &str = "a";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study1Params {
    pub n: usize,
    pub psi: [f64; 2],
    pub link: Link,
    pub seed: u64,
}

impl Default for Study1Params {
    fn default() -> Self {
        Study1Params {
            n: 1000,
            psi: [-1.0, 2.0],
            link: Link::Logit,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study2aParams {
    pub n: usize,
    pub psi_1: [f64; 2],
    pub psi_2: [f64; 2],
    pub seed: u64,
}

impl Default for Study2aParams {
    fn default() -> Self {
        Study2aParams {
            n: 1000,
            psi_1: [-2.0, -1.0],
            psi_2: [-2.0, -1.0],
            seed: 0,
        }
    }
}

fn cube(x: f64) -> f64 {
    x * x * x
}

fn log_abs(x: f64) -> f64 {
    x.abs().ln()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Study2bParams {
    pub n: usize,
    /// `θ₀ … θ₈`.
    pub theta: [f64; 9],
    pub delta: [f64; 2],
    pub alpha1: [f64; 2],
    pub alpha2: [f64; 2],
    pub seed: u64,
    /// Nonlinear term in `X₁`; `x³` by default.
    #[serde(skip, default = "default_phi1")]
    pub phi1: fn(f64) -> f64,
    /// Nonlinear term in `X₂`; `log|x|` by default.
    #[serde(skip, default = "default_phi2")]
    pub phi2: fn(f64) -> f64,
}

fn default_phi1() -> fn(f64) -> f64 {
    cube
}

fn default_phi2() -> fn(f64) -> f64 {
    log_abs
}

impl Default for Study2bParams {
    fn default() -> Self {
        Study2bParams {
            n: 1000,
            theta: [0.0, 1.0, 0.0, -0.5, -0.1, 1.0, 0.25, 0.5, 0.35],
            delta: [0.5, 0.6],
            alpha1: [-2.5, 1.25],
            alpha2: [-0.5, 1.25],
            seed: 0,
            phi1: cube,
            phi2: log_abs,
        }
    }
}

impl Study2bParams {
    /// `(θ₆+θ₇+θ₈, θ₆+θ₇, θ₆+θ₈, θ₆)`: the stage-2 contrast in each
    /// `(o₂, a₁)` cell `(1,1), (1,0), (0,1), (0,0)`.
    pub fn phi_coefficients(&self) -> [f64; 4] {
        let t = &self.theta;
        [t[6] + t[7] + t[8], t[6] + t[7], t[6] + t[8], t[6]]
    }

    /// `P(O₂ = 1)` in each `(o₁, a₁)` cell `(1,1), (1,0), (0,1), (0,0)`.
    pub fn k_coefficients(&self) -> [f64; 4] {
        let [d1, d2] = self.delta;
        [expit(d1 + d2), expit(d1), expit(d2), expit(0.0)]
    }

    /// True stage-2 blip for terms `(1, o₂, a₁)`.
    pub fn psi_2(&self) -> [f64; 3] {
        [self.theta[6], self.theta[7], self.theta[8]]
    }
}

fn nonzero_draw(mut draw: impl FnMut() -> f64) -> f64 {
    loop {
        let x = draw();
        if x != 0.0 {
            return x;
        }
    }
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

fn derived_columns(x: &[f64]) -> BTreeMap<String, Vec<f64>> {
    let col = |f: fn(f64) -> f64| x.iter().map(|&v| f(v)).collect::<Vec<_>>();
    BTreeMap::from([
        ("x".to_string(), x.to_vec()),
        ("log_abs_x".to_string(), col(log_abs)),
        ("cos_pi_x".to_string(), col(cos_pi)),
        ("x_sq".to_string(), col(|v| v * v)),
        ("x_cube".to_string(), col(cube)),
        ("sin_x".to_string(), col(f64::sin)),
    ])
}

fn subject_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

/// `f(x) = x + log|x| + cos(πx) + x³`.
pub fn study1_treatment_free(x: f64) -> f64 {
    x + log_abs(x) + cos_pi(x) + cube(x)
}

/// `P(A = 1 | x) = expit(−2x + sin x + x²)`.
pub fn study1_propensity(x: f64) -> f64 {
    expit(-2.0 * x + x.sin() + x * x)
}

pub fn generate_study1<R: Rng + ?Sized>(params: &Study1Params, rng: &mut R) -> LongitudinalDataset {
    let n = params.n;
    let mut x = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let [psi0, psi1] = params.psi;
    for _ in 0..n {
        let xi = nonzero_draw(|| rng.random_range(0.0..2.0));
        let ai = bernoulli(rng, study1_propensity(xi));
        let eta = study1_treatment_free(xi) + f64::from(ai) * (psi0 + psi1 * xi);
        y.push(bernoulli(rng, params.link.bernoulli_probability(eta)));
        x.push(xi);
        a.push(ai);
    }
    LongitudinalDataset {
        subject_ids: subject_ids(n),
        treatment_name: TREATMENT.into(),
        baseline: BTreeMap::new(),
        stages: vec![StageData {
            treatment: a,
            covariates: derived_columns(&x),
        }],
        outcome: y,
        design_weights: None,
    }
}

fn linear_regret(psi: [f64; 2], x: f64, a: u8) -> f64 {
    let c = psi[0] + psi[1] * x;
    (f64::from(u8::from(c > 0.0)) - f64::from(a)) * c
}

pub fn generate_study2a<R: Rng + ?Sized>(
    params: &Study2aParams,
    rng: &mut R,
) -> LongitudinalDataset {
    let n = params.n;
    let x1_dist = Normal::new(2.0, 1.0).expect("valid normal");
    let x2_sd = 2.0f64.sqrt();
    let (mut x1, mut x2) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut a1, mut a2, mut y) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let u1 = nonzero_draw(|| x1_dist.sample(rng));
        let t1 = bernoulli(rng, expit(-5.0 + u1 + u1 * u1));
        let x2_dist = Normal::new(1.0 + 0.5 * u1, x2_sd).expect("valid normal");
        let u2 = nonzero_draw(|| x2_dist.sample(rng));
        let t2 = bernoulli(rng, expit(-2.5 * u2 + u2 * u2 + u2.sin()));
        let eta = u1 + log_abs(u1) + cos_pi(u1)
            - linear_regret(params.psi_1, u1, t1)
            - linear_regret(params.psi_2, u2, t2);
        y.push(bernoulli(rng, Link::Logit.bernoulli_probability(eta)));
        x1.push(u1);
        x2.push(u2);
        a1.push(t1);
        a2.push(t2);
    }
    LongitudinalDataset {
        subject_ids: subject_ids(n),
        treatment_name: TREATMENT.into(),
        baseline: BTreeMap::new(),
        stages: vec![
            StageData {
                treatment: a1,
                covariates: derived_columns(&x1),
            },
            StageData {
                treatment: a2,
                covariates: derived_columns(&x2),
            },
        ],
        outcome: y,
        design_weights: None,
    }
}

pub fn generate_study2b<R: Rng + ?Sized>(
    params: &Study2bParams,
    rng: &mut R,
) -> LongitudinalDataset {
    let n = params.n;
    let t = &params.theta;
    let x1_dist = Normal::new(3.0, 1.0).expect("valid normal");
    let mut cols: [Vec<f64>; 6] = Default::default();
    let (mut a1, mut a2, mut y) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let x1 = x1_dist.sample(rng);
        let o1 = bernoulli(rng, 0.5);
        let t1 = bernoulli(rng, expit(params.alpha1[0] + params.alpha1[1] * x1));
        let x2_dist = Normal::new(-0.5 + 0.5 * x1, 1.0).expect("valid normal");
        let x2 = nonzero_draw(|| x2_dist.sample(rng));
        let o2 = bernoulli(
            rng,
            expit(params.delta[0] * f64::from(o1) + params.delta[1] * f64::from(t1)),
        );
        let t2 = bernoulli(rng, expit(params.alpha2[0] + params.alpha2[1] * x2));
        let (fo1, fa1, fo2, fa2) = (f64::from(o1), f64::from(t1), f64::from(o2), f64::from(t2));
        let (p1, p2) = ((params.phi1)(x1), (params.phi2)(x2));
        let m = t[0]
            + t[1] * x1
            + t[2] * fo1
            + t[3] * fa1
            + t[4] * fo1 * fa1
            + t[5] * x2
            + t[6] * fa2
            + t[7] * fo2 * fa2
            + t[8] * fa1 * fa2
            + p1
            + p2;
        y.push(bernoulli(rng, Link::Logit.bernoulli_probability(m)));
        for (c, v) in cols.iter_mut().zip([x1, fo1, p1, x2, fo2, p2]) {
            c.push(v);
        }
        a1.push(t1);
        a2.push(t2);
    }
    let [x1, o1, p1, x2, o2, p2] = cols;
    let stage = |treatment, x, o, phi_name: &str, phi| StageData {
        treatment,
        covariates: BTreeMap::from([
            ("x".to_string(), x),
            ("o".to_string(), o),
            (phi_name.to_string(), phi),
        ]),
    };
    LongitudinalDataset {
        subject_ids: subject_ids(n),
        treatment_name: TREATMENT.into(),
        baseline: BTreeMap::new(),
        stages: vec![stage(a1, x1, o1, "phi1", p1), stage(a2, x2, o2, "phi2", p2)],
        outcome: y,
        design_weights: None,
    }
}

/// Synthetic three-stage survey panel with sampling design weights.
///
/// Baseline `age` (standardized) and `sex`; at each stage a standardized
/// consumption score `cpd` (with `cpd_sq`), an intention indicator `plan` and
/// a treatment `a`. The outcome follows
/// `logit P(Y=1) = −0.5 + 0.4·age + 0.3·sex + 0.25·Σ cpd_j² − Σ μ_j` with
/// blips `a_j·(ψ_0 + ψ_1·plan_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyParams {
    pub n: usize,
    pub psi: [[f64; 2]; 3],
}

impl Default for SurveyParams {
    fn default() -> Self {
        SurveyParams {
            n: 1000,
            psi: [[-0.2, 0.6], [-0.3, 0.8], [-0.4, 1.0]],
        }
    }
}

pub fn generate_survey<R: Rng + ?Sized>(params: &SurveyParams, rng: &mut R) -> LongitudinalDataset {
    let n = params.n;
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let age: Vec<f64> = (0..n).map(|_| std.sample(rng)).collect();
    let sex: Vec<f64> = (0..n).map(|_| f64::from(bernoulli(rng, 0.5))).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
    let mut eta: Vec<f64> = (0..n).map(|i| -0.5 + 0.4 * age[i] + 0.3 * sex[i]).collect();
    let mut prev_cpd = vec![0.0; n];
    let mut prev_a = vec![0u8; n];
    let mut stages = Vec::with_capacity(3);
    for psi in params.psi {
        let (mut cpd, mut plan, mut a) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for i in 0..n {
            let x = 0.5 * prev_cpd[i] - 0.3 * f64::from(prev_a[i]) + std.sample(rng);
            let o = bernoulli(rng, expit(-0.2 + 0.5 * f64::from(prev_a[i]) - 0.3 * x));
            let t = bernoulli(
                rng,
                expit(-0.4 + 0.8 * x + 0.5 * f64::from(o) - 0.3 * age[i]),
            );
            eta[i] += 0.25 * x * x - linear_regret(psi, f64::from(o), t);
            cpd.push(x);
            plan.push(f64::from(o));
            a.push(t);
        }
        stages.push(StageData {
            treatment: a.clone(),
            covariates: BTreeMap::from([
                ("cpd".to_string(), cpd.clone()),
                ("cpd_sq".to_string(), cpd.iter().map(|v| v * v).collect()),
                ("plan".to_string(), plan),
            ]),
        });
        prev_cpd = cpd;
        prev_a = a;
    }
    let outcome = eta
        .iter()
        .map(|&e| bernoulli(rng, Link::Logit.bernoulli_probability(e)))
        .collect();
    LongitudinalDataset {
        subject_ids: subject_ids(n),
        treatment_name: TREATMENT.into(),
        baseline: BTreeMap::from([("age".to_string(), age), ("sex".to_string(), sex)]),
        stages,
        outcome,
        design_weights: Some(weights),
    }
}

/// Working models for [`generate_survey`], nonlinear terms flagged.
pub fn survey_specs() -> [StageModelSpec; 3] {
    let stage = |j: usize| {
        let mut linear = vec![
            "age".to_string(),
            "sex".to_string(),
            "cpd".to_string(),
            "plan".to_string(),
        ];
        if j > 1 {
            linear.push(format!("a@{}", j - 1));
            linear.push(format!("plan@{}:a@{}", j - 1, j - 1));
        }
        let linear: Vec<&str> = linear.iter().map(String::as_str).collect();
        StageModelSpec {
            treatment_free: terms(&linear, &["cpd_sq"]),
            blip: terms(&["plan"], &[]),
            treatment: terms(&["age", "cpd", "plan"], &[]),
        }
    };
    [stage(1), stage(2), stage(3)]
}

/// First-stage blip `(ψ₁₀, ψ₁₁)` for terms `(1, o₁)` from the closed form.
pub fn true_psi1_study2b(params: &Study2bParams) -> (f64, f64) {
    let [p1, p2, p3, p4] = params.phi_coefficients().map(positive_part);
    let [k1, k2, k3, k4] = params.k_coefficients();
    let (t3, t4) = (params.theta[3], params.theta[4]);
    let psi10 = t3 + p3 - p4 + k3 * (p1 - p3) - k4 * (p2 - p4);
    let psi11 = t4 + (k1 - k3) * (p1 - p3) - (k2 - k4) * (p2 - p4);
    (psi10, psi11)
}

/// Link-scale value of optimal stage-2 play in cell `(o₁, a₁)`, excluding
/// terms that do not depend on `a₁`.
fn cell_value(params: &Study2bParams, o1: u8, a1: u8) -> f64 {
    let t = &params.theta;
    let (fo1, fa1) = (f64::from(o1), f64::from(a1));
    let p_o2 = expit(params.delta[0] * fo1 + params.delta[1] * fa1);
    let gain = |o2: f64| positive_part(t[6] + t[7] * o2 + t[8] * fa1);
    t[3] * fa1 + t[4] * fo1 * fa1 + p_o2 * gain(1.0) + (1.0 - p_o2) * gain(0.0)
}

/// `(ψ₁₀, ψ₁₁)` from the four `(o₁, a₁)` cell values by exact contrast.
pub fn psi1_by_contrast(params: &Study2bParams) -> (f64, f64) {
    let psi10 = cell_value(params, 0, 1) - cell_value(params, 0, 0);
    let psi11 = cell_value(params, 1, 1) - cell_value(params, 1, 0) - psi10;
    (psi10, psi11)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psi1OracleCheck {
    /// Exact contrast over `O₂`.
    pub contrast: (f64, f64),
    /// Sampled counterpart with `O₂` drawn `m/4` times per cell.
    pub sampled: (f64, f64),
    pub standard_errors: (f64, f64),
    pub draws: usize,
}

pub const MIN_ORACLE_DRAWS: usize = 100_000;

/// Brute-force check of the first-stage truth: exact contrast over `O₂` plus
/// a sampled estimate of the same contrast with standard errors.
pub fn mc_verify_psi1_oracle<R: Rng + ?Sized>(
    params: &Study2bParams,
    m: usize,
    rng: &mut R,
) -> Result<Psi1OracleCheck> {
    if m < MIN_ORACLE_DRAWS {
        return Err(Error::Config(format!(
            "oracle check needs at least {MIN_ORACLE_DRAWS} draws, got {m}"
        )));
    }
    let t = &params.theta;
    let per_cell = m / 4;
    // (mean, variance of the mean) per cell, ordered (o₁, a₁) = 00, 01, 10, 11.
    let mut cells = [(0.0, 0.0); 4];
    for (idx, cell) in cells.iter_mut().enumerate() {
        let (o1, a1) = ((idx / 2) as u8, (idx % 2) as u8);
        let (fo1, fa1) = (f64::from(o1), f64::from(a1));
        let p_o2 = expit(params.delta[0] * fo1 + params.delta[1] * fa1);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..per_cell {
            let o2 = f64::from(bernoulli(rng, p_o2));
            let v = positive_part(t[6] + t[7] * o2 + t[8] * fa1);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / per_cell as f64;
        let var = (sum_sq / per_cell as f64 - mean * mean).max(0.0) * per_cell as f64
            / (per_cell as f64 - 1.0);
        *cell = (t[3] * fa1 + t[4] * fo1 * fa1 + mean, var / per_cell as f64);
    }
    let psi10 = cells[1].0 - cells[0].0;
    let psi11 = cells[3].0 - cells[2].0 - psi10;
    let se10 = (cells[1].1 + cells[0].1).sqrt();
    let se11 = cells.iter().map(|c| c.1).sum::<f64>().sqrt();
    Ok(Psi1OracleCheck {
        contrast: psi1_by_contrast(params),
        sampled: (psi10, psi11),
        standard_errors: (se10, se11),
        draws: per_cell * 4,
    })
}

/// Which working models keep their nonlinear terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Scenario {
    /// Both models misspecified.
    BothWrong = 1,
    /// Treatment-free model misspecified.
    TreatmentFreeWrong = 2,
    /// Treatment model misspecified.
    TreatmentWrong = 3,
    /// Both models correct.
    BothCorrect = 4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::BothWrong,
        Scenario::TreatmentFreeWrong,
        Scenario::TreatmentWrong,
        Scenario::BothCorrect,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    fn treatment_free_correct(self) -> bool {
        matches!(self, Scenario::TreatmentWrong | Scenario::BothCorrect)
    }

    fn treatment_correct(self) -> bool {
        matches!(self, Scenario::TreatmentFreeWrong | Scenario::BothCorrect)
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Scenario::BothWrong),
            2 => Ok(Scenario::TreatmentFreeWrong),
            3 => Ok(Scenario::TreatmentWrong),
            4 => Ok(Scenario::BothCorrect),
            _ => Err(Error::Usage(format!(
                "scenario must be 1, 2, 3 or 4, got {v}"
            ))),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("scenario must be 1, 2, 3 or 4, got '{s}'")))?;
        v.try_into()
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Drops nonlinear terms from the models the scenario misspecifies. Blip
/// terms are left alone.
pub fn apply_misspecification(spec: &StageModelSpec, scenario: Scenario) -> StageModelSpec {
    let keep = |terms: &[Term], correct: bool| -> Vec<Term> {
        terms
            .iter()
            .filter(|t| correct || !t.nonlinear)
            .cloned()
            .collect()
    };
    StageModelSpec {
        treatment_free: keep(&spec.treatment_free, scenario.treatment_free_correct()),
        blip: spec.blip.clone(),
        treatment: keep(&spec.treatment, scenario.treatment_correct()),
    }
}

fn terms(linear: &[&str], nonlinear: &[&str]) -> Vec<Term> {
    linear
        .iter()
        .map(|s| Term::linear(s))
        .chain(nonlinear.iter().map(|s| Term::nonlinear(s)))
        .collect()
}

/// Correctly specified Study 1 model, nonlinear terms flagged.
pub fn study1_spec() -> StageModelSpec {
    StageModelSpec {
        treatment_free: terms(&["x"], &["log_abs_x", "cos_pi_x", "x_cube"]),
        blip: terms(&["x"], &[]),
        treatment: terms(&["x"], &["sin_x", "x_sq"]),
    }
}

/// Study 2a models for stages 1 and 2, nonlinear terms flagged.
pub fn study2a_specs() -> [StageModelSpec; 2] {
    [
        StageModelSpec {
            treatment_free: terms(&["x"], &["log_abs_x", "cos_pi_x"]),
            blip: terms(&["x"], &[]),
            treatment: terms(&["x"], &["x_sq"]),
        },
        StageModelSpec {
            treatment_free: terms(
                &["x@1", "a@1", "a@1:x@1", "x"],
                &["log_abs_x@1", "cos_pi_x@1"],
            ),
            blip: terms(&["x"], &[]),
            treatment: terms(&["x"], &["x_sq", "sin_x"]),
        },
    ]
}

/// Study 2b models for stages 1 and 2, nonlinear terms flagged.
pub fn study2b_specs() -> [StageModelSpec; 2] {
    [
        StageModelSpec {
            treatment_free: terms(&["x", "o"], &["phi1"]),
            blip: terms(&["o"], &[]),
            treatment: terms(&["x"], &[]),
        },
        StageModelSpec {
            treatment_free: terms(
                &["x@1", "o@1", "a@1", "o@1:a@1", "x", "o"],
                &["phi1@1", "phi2"],
            ),
            blip: terms(&["o", "a@1"], &[]),
            treatment: terms(&["x"], &[]),
        },
    ]
}

/// Study 2a misspecification cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Study2aCase {
    /// Treatment-free models wrong at both stages.
    One = 1,
    /// Stage 2 treatment-free wrong; stage 1 treatment model wrong.
    Two = 2,
}

impl Study2aCase {
    pub fn scenarios(self) -> [Scenario; 2] {
        match self {
            Study2aCase::One => [Scenario::TreatmentFreeWrong, Scenario::TreatmentFreeWrong],
            Study2aCase::Two => [Scenario::TreatmentWrong, Scenario::TreatmentFreeWrong],
        }
    }
}

impl From<Study2aCase> for u8 {
    fn from(c: Study2aCase) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for Study2aCase {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Study2aCase::One),
            2 => Ok(Study2aCase::Two),
            _ => Err(Error::Usage(format!(
                "study2a case must be 1 or 2, got {v}"
            ))),
        }
    }
}

/// A study together with the working models used to analyse it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "lowercase")]
pub enum StudyDesign {
    Study1 {
        params: Study1Params,
        scenario: Scenario,
    },
    Study2a {
        params: Study2aParams,
        case: Study2aCase,
    },
    Study2b {
        params: Study2bParams,
        scenario: Scenario,
    },
}

impl StudyDesign {
    pub fn name(&self) -> &'static str {
        match self {
            StudyDesign::Study1 { .. } => "study1",
            StudyDesign::Study2a { .. } => "study2a",
            StudyDesign::Study2b { .. } => "study2b",
        }
    }

    pub fn n(&self) -> usize {
        match self {
            StudyDesign::Study1 { params, .. } => params.n,
            StudyDesign::Study2a { params, .. } => params.n,
            StudyDesign::Study2b { params, .. } => params.n,
        }
    }

    pub fn link(&self) -> Link {
        match self {
            StudyDesign::Study1 { params, .. } => params.link,
            _ => Link::Logit,
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> LongitudinalDataset {
        match self {
            StudyDesign::Study1 { params, .. } => generate_study1(params, rng),
            StudyDesign::Study2a { params, .. } => generate_study2a(params, rng),
            StudyDesign::Study2b { params, .. } => generate_study2b(params, rng),
        }
    }

    /// Working models with the design's misspecification applied, stage 1 first.
    pub fn specs(&self) -> Vec<StageModelSpec> {
        match self {
            StudyDesign::Study1 { scenario, .. } => {
                vec![apply_misspecification(&study1_spec(), *scenario)]
            }
            StudyDesign::Study2a { case, .. } => study2a_specs()
                .iter()
                .zip(case.scenarios())
                .map(|(s, sc)| apply_misspecification(s, sc))
                .collect(),
            StudyDesign::Study2b { scenario, .. } => study2b_specs()
                .iter()
                .map(|s| apply_misspecification(s, *scenario))
                .collect(),
        }
    }

    /// True blip parameters per stage, stage 1 first.
    pub fn truth(&self) -> Vec<Vec<f64>> {
        match self {
            StudyDesign::Study1 { params, .. } => vec![params.psi.to_vec()],
            StudyDesign::Study2a { params, .. } => {
                vec![params.psi_1.to_vec(), params.psi_2.to_vec()]
            }
            StudyDesign::Study2b { params, .. } => {
                let (p10, p11) = true_psi1_study2b(params);
                vec![vec![p10, p11], params.psi_2().to_vec()]
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub design: StudyDesign,
    pub methods: Vec<Method>,
    pub replications: usize,
    /// Pseudo-outcome replicates per stage below `K`.
    pub pseudo_replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Largest tolerated share of failed replications per method.
    pub max_failure_fraction: f64,
}

impl SimulationSettings {
    pub fn new(design: StudyDesign, methods: Vec<Method>, replications: usize, seed: u64) -> Self {
        SimulationSettings {
            design,
            methods,
            replications,
            pseudo_replicates: DEFAULT_REPLICATES,
            seed,
            solver: SolverOptions::default(),
            max_failure_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replication: usize,
    pub method: Method,
    pub stage: usize,
    pub term: String,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub replication: usize,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub stage: usize,
    pub term: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub mc_sd: f64,
    pub converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub replicates: Vec<ReplicateRow>,
    pub failures: Vec<FailureRow>,
    pub summary: Vec<SummaryRow>,
}

impl SimulationResult {
    pub fn summary_for(&self, method: Method, stage: usize) -> Vec<&SummaryRow> {
        self.summary
            .iter()
            .filter(|r| r.method == method && r.stage == stage)
            .collect()
    }

    /// Errors when more than `max_fraction` of replications failed for a method.
    pub fn check_failure_rate(
        &self,
        methods: &[Method],
        replications: usize,
        max_fraction: f64,
    ) -> Result<()> {
        for &method in methods {
            let failed = self.failures.iter().filter(|f| f.method == method).count();
            if failed as f64 > max_fraction * replications as f64 {
                return Err(Error::TooManyFailures {
                    method: method.to_string(),
                    failed,
                    total: replications,
                });
            }
        }
        Ok(())
    }
}

/// Seed for the estimator in replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    stream(seed, Purpose::Replication, 0, r as u64).next_u64()
}

/// Dataset for replication `r`.
pub fn replication_dataset(design: &StudyDesign, seed: u64, r: usize) -> LongitudinalDataset {
    design.generate(&mut stream(seed, Purpose::Data, 0, r as u64))
}

/// Runs every method on every replication. Each method sees the same
/// datasets. Failed fits are recorded, not fatal.
pub fn run_simulation(settings: &SimulationSettings) -> Result<SimulationResult> {
    if settings.replications == 0 {
        return Err(Error::Usage("replications must be at least 1".into()));
    }
    if settings.design.n() == 0 {
        return Err(Error::Usage("n must be at least 1".into()));
    }
    if settings.methods.is_empty() {
        return Err(Error::Usage("no methods selected".into()));
    }
    let specs = settings.design.specs();
    let truth = settings.design.truth();
    let link = settings.design.link();

    let per_rep: Vec<(Vec<ReplicateRow>, Vec<FailureRow>)> = (0..settings.replications)
        .into_par_iter()
        .map(|r| {
            let data = replication_dataset(&settings.design, settings.seed, r);
            let est_seed = replication_seed(settings.seed, r);
            let (mut rows, mut failures) = (Vec::new(), Vec::new());
            for &method in &settings.methods {
                let config = EstimatorConfig {
                    method,
                    link,
                    replicates: settings.pseudo_replicates,
                    seed: est_seed,
                    solver: settings.solver,
                    ..EstimatorConfig::default()
                };
                match estimate_dtr(&data, &specs, &config) {
                    Ok(est) => {
                        for s in &est.stages {
                            for (term, &estimate) in s.blip_terms.iter().zip(&s.psi_hat) {
                                rows.push(ReplicateRow {
                                    replication: r,
                                    method,
                                    stage: s.stage,
                                    term: term.clone(),
                                    estimate,
                                });
                            }
                        }
                    }
                    Err(e) => failures.push(FailureRow {
                        replication: r,
                        method,
                        error: e.to_string(),
                    }),
                }
            }
            (rows, failures)
        })
        .collect();

    let (mut replicates, mut failures) = (Vec::new(), Vec::new());
    for (rows, fails) in per_rep {
        replicates.extend(rows);
        failures.extend(fails);
    }

    let mut summary = Vec::new();
    for &method in &settings.methods {
        for (j, spec) in specs.iter().enumerate() {
            for (k, term) in spec.blip_names().into_iter().enumerate() {
                let values: Vec<f64> = replicates
                    .iter()
                    .filter(|r| r.method == method && r.stage == j + 1 && r.term == term)
                    .map(|r| r.estimate)
                    .collect();
                let count = values.len();
                let mean = values.iter().sum::<f64>() / count as f64;
                let mc_sd = if count > 1 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64)
                        .sqrt()
                } else {
                    f64::NAN
                };
                let t = truth[j][k];
                summary.push(SummaryRow {
                    method,
                    stage: j + 1,
                    term,
                    truth: t,
                    mean,
                    bias: mean - t,
                    mc_sd,
                    converged: count,
                });
            }
        }
    }

    Ok(SimulationResult {
        replicates,
        failures,
        summary,
    })
}
