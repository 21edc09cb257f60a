//! Blip and regret algebra for linear blips `γ(h, a; ψ) = a·ψᵀhᵠ` with
//! reference treatment 0, and the pseudo-outcome construction used in
//! backward induction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::{clamp_probability, Link};
use crate::rng::{stream, Purpose};

/// Blip coefficients for one stage; the first entry multiplies the intercept
/// of `hᵠ` (the main effect of treatment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBlip {
    pub psi: Vec<f64>,
}

impl StageBlip {
    pub fn new(psi: Vec<f64>) -> Self {
        StageBlip { psi }
    }

    pub fn blip(&self, h_psi: &[f64], a: u8) -> Result<f64> {
        blip(&self.psi, h_psi, a)
    }

    pub fn optimal_action(&self, h_psi: &[f64]) -> Result<u8> {
        optimal_action(&self.psi, h_psi)
    }

    pub fn regret(&self, h_psi: &[f64], a: u8) -> Result<f64> {
        regret(&self.psi, h_psi, a)
    }
}

/// One subject's covariate vectors and treatment at a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStage {
    pub h_beta: Vec<f64>,
    pub h_psi: Vec<f64>,
    pub h_alpha: Vec<f64>,
    pub a: u8,
}

fn contrast(psi: &[f64], h_psi: &[f64]) -> Result<f64> {
    if psi.len() != h_psi.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} blip coefficients for {} tailoring values",
            psi.len(),
            h_psi.len()
        )));
    }
    Ok(psi.iter().zip(h_psi).map(|(p, h)| p * h).sum())
}

/// `a · ψᵀhᵠ`.
pub fn blip(psi: &[f64], h_psi: &[f64], a: u8) -> Result<f64> {
    let c = contrast(psi, h_psi)?;
    Ok(if a == 1 { c } else { 0.0 })
}

/// `1(ψᵀhᵠ > 0)`; an exact tie recommends the reference treatment.
pub fn optimal_action(psi: &[f64], h_psi: &[f64]) -> Result<u8> {
    Ok(u8::from(contrast(psi, h_psi)? > 0.0))
}

/// `γ(h, a_opt) − γ(h, a) = (a_opt − a)·ψᵀhᵠ`, never negative.
pub fn regret(psi: &[f64], h_psi: &[f64], a: u8) -> Result<f64> {
    let c = contrast(psi, h_psi)?;
    let opt = u8::from(c > 0.0);
    Ok((f64::from(opt) - f64::from(a)) * c)
}

/// `g⁻¹(g(p̂_K) + Σ later regrets)`, with `p̂_K` clamped to
/// `[1e-10, 1 − 1e-10]` on the way in and the result clamped on the way out.
/// A zero regret sum returns the clamped `p̂_K` exactly.
pub fn pseudo_outcome_probability(p_hat_k: f64, regrets_sum: f64, link: Link) -> f64 {
    let p = clamp_probability(p_hat_k);
    if regrets_sum == 0.0 {
        return p;
    }
    let eta = link.g(p).expect("clamped probability lies in (0, 1)") + regrets_sum;
    clamp_probability(link.inverse(eta))
}

/// `replicates` independent Bernoulli vectors, one per pseudo-outcome
/// replicate. Replicate `r` at stage `stage` always reads the same stream.
pub fn draw_pseudo_outcomes(
    probabilities: &[f64],
    replicates: usize,
    seed: u64,
    stage: usize,
) -> Vec<Vec<u8>> {
    (0..replicates)
        .map(|r| draw_replicate(probabilities, seed, stage, r))
        .collect()
}

pub(crate) fn draw_replicate(
    probabilities: &[f64],
    seed: u64,
    stage: usize,
    replicate: usize,
) -> Vec<u8> {
    let mut rng = stream(seed, Purpose::PseudoOutcome, stage, replicate as u64);
    probabilities
        .iter()
        .map(|&p| u8::from(rng.random::<f64>() < p))
        .collect()
}
