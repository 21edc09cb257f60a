//! Propensity scores and balancing weights.
//!
//! Overlap weights `|a − π̂|` balance the treatment-free estimating equation
//! for an identity link. For a non-identity link the balance has to hold after
//! scaling by `κ(a, x) = (g⁻¹)′(βᵀxᵝ + aψᵀxᵠ)`, i.e.
//!
//! ```text
//! (1 − π) w(0, x) κ(0, x) = π w(1, x) κ(1, x)
//! ```
//!
//! which `w(a, x) = |a − π̂(x)| · κ(1 − a, x)` satisfies row by row.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::Link;
use crate::solver::{solve_estimating_equations, DesignMatrix, SolverOptions};

/// Bounds applied to fitted propensities.
pub const PROPENSITY_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub alpha_hat: Vec<f64>,
    pub fitted: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    None,
    Dwols,
    Dwglm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub kind: WeightKind,
}

impl WeightVector {
    pub fn unit(n: usize) -> Self {
        WeightVector {
            values: vec![1.0; n],
            kind: WeightKind::None,
        }
    }

    /// Elementwise product with sampling design weights, when present.
    pub fn with_design(mut self, design_weights: Option<&[f64]>) -> Self {
        if let Some(d) = design_weights {
            for (w, d) in self.values.iter_mut().zip(d) {
                *w *= d;
            }
        }
        self
    }
}

/// Logistic regression of `a` on `x_alpha` by maximum likelihood, optionally
/// weighted. Fitted values are clamped to `[1e-6, 1 − 1e-6]`.
pub fn fit_propensity(
    x_alpha: &DMatrix<f64>,
    a: &[u8],
    base_weights: Option<&[f64]>,
    options: &SolverOptions,
) -> Result<PropensityFit> {
    let n = a.len();
    let weights = match base_weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    if weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} treatments but {} base weights",
            weights.len()
        )));
    }
    for arm in [0u8, 1] {
        if !a.iter().zip(&weights).any(|(&ai, &w)| ai == arm && w > 0.0) {
            return Err(Error::EmptyGroup { arm });
        }
    }
    // With the canonical link the estimating equations are the likelihood score.
    let design = DesignMatrix::new(x_alpha.clone(), DMatrix::zeros(n, 0), vec![0; n])?;
    let y: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let fit = solve_estimating_equations(&design, &y, &weights, Link::Logit, options)?;
    let fitted = (0..n)
        .map(|i| {
            let eta = design.linear_predictor(i, 0, &fit.beta_hat, &[]);
            Link::Logit
                .inverse(eta)
                .clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)
        })
        .collect();
    Ok(PropensityFit {
        alpha_hat: fit.beta_hat,
        fitted,
    })
}

/// `wᵢ = |aᵢ − π̂ᵢ|`.
pub fn overlap_weights(a: &[u8], pi_hat: &[f64]) -> WeightVector {
    WeightVector {
        values: a
            .iter()
            .zip(pi_hat)
            .map(|(&ai, &p)| (f64::from(ai) - p).abs())
            .collect(),
        kind: WeightKind::Dwols,
    }
}

/// `κ(a, x) = (g⁻¹)′(βᵀxᵝ + a·ψᵀxᵠ)`.
pub fn kappa(
    a: u8,
    x_beta_row: &[f64],
    x_psi_row: &[f64],
    beta: &[f64],
    psi: &[f64],
    link: Link,
) -> f64 {
    let mut eta: f64 = x_beta_row.iter().zip(beta).map(|(x, b)| x * b).sum();
    if a == 1 {
        eta += x_psi_row.iter().zip(psi).map(|(x, p)| x * p).sum::<f64>();
    }
    link.inverse_derivative(eta)
}

/// `wᵢ = |aᵢ − π̂ᵢ| · κ(1 − aᵢ, xᵢ)`, with κ taken at the opposite arm.
pub fn dwglm_weights(
    a: &[u8],
    pi_hat: &[f64],
    design: &DesignMatrix,
    beta: &[f64],
    psi: &[f64],
    link: Link,
) -> WeightVector {
    let values = (0..design.n_rows())
        .map(|i| {
            let overlap = (f64::from(a[i]) - pi_hat[i]).abs();
            let eta = design.linear_predictor(i, 1 - a[i], beta, psi);
            overlap * link.inverse_derivative(eta)
        })
        .collect();
    WeightVector {
        values,
        kind: WeightKind::Dwglm,
    }
}
