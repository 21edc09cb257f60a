//! Damped Newton solver for the weighted estimating equations
//!
//! ```text
//! U(β, ψ) = Σᵢ wᵢ (xᵢᵝ ; aᵢxᵢᵠ) (yᵢ − g⁻¹(βᵀxᵢᵝ + ψᵀaᵢxᵢᵠ)) = 0
//! ```
//!
//! This is the exact system the balancing argument is built on. For the logit
//! link it coincides with the weighted logistic-regression score; for probit
//! and cloglog it differs from the variance-weighted GLM score, so the solver
//! works on `U` directly rather than delegating to an IRLS routine.
//!
//! The system is homogeneous in the weights. Internally the weights are
//! rescaled to unit mean before solving, so the convergence tolerance means the
//! same thing whatever scale the caller's weights are on, and the reported
//! residual is the ∞-norm of `U` under those unit-mean weights.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::{clamp_probability, Link};

/// Treatment-free columns `Xᵝ`, blip columns `Xᵠ` and the binary treatment.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    treatment_free: DMatrix<f64>,
    blip: DMatrix<f64>,
    treatment: Vec<u8>,
}

impl DesignMatrix {
    /// Validates shapes, binary treatment, non-zero columns and heredity (each
    /// blip column must equal some treatment-free column).
    pub fn new(
        treatment_free: DMatrix<f64>,
        blip: DMatrix<f64>,
        treatment: Vec<u8>,
    ) -> Result<Self> {
        let n = treatment.len();
        if treatment_free.nrows() != n || blip.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "treatment-free has {} rows, blip has {} rows, treatment has {n}",
                treatment_free.nrows(),
                blip.nrows()
            )));
        }
        if treatment_free.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "treatment-free model needs at least one column".into(),
            ));
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(Error::NonBinaryValue {
                row: i,
                column: "treatment".into(),
                value: treatment[i].to_string(),
            });
        }
        for (label, m) in [("treatment-free", &treatment_free), ("blip", &blip)] {
            for (j, col) in m.column_iter().enumerate() {
                if col.iter().all(|&v| v == 0.0) {
                    return Err(Error::Domain(format!("{label} column {j} is all zero")));
                }
                if col.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!(
                        "{label} column {j} has non-finite entries"
                    )));
                }
            }
        }
        for (j, b) in blip.column_iter().enumerate() {
            if !treatment_free.column_iter().any(|t| t == b) {
                return Err(Error::Config(format!(
                    "blip column {j} is not among the treatment-free columns (heredity)"
                )));
            }
        }
        Ok(DesignMatrix {
            treatment_free,
            blip,
            treatment,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_beta(&self) -> usize {
        self.treatment_free.ncols()
    }

    pub fn n_psi(&self) -> usize {
        self.blip.ncols()
    }

    pub fn treatment_free(&self) -> &DMatrix<f64> {
        &self.treatment_free
    }

    pub fn blip(&self) -> &DMatrix<f64> {
        &self.blip
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    /// `βᵀxᵢᵝ + a·ψᵀxᵢᵠ` for row `i` with the treatment set to `a`.
    pub fn linear_predictor(&self, i: usize, a: u8, beta: &[f64], psi: &[f64]) -> f64 {
        let mut eta: f64 = (0..self.n_beta())
            .map(|k| self.treatment_free[(i, k)] * beta[k])
            .sum();
        if a == 1 {
            eta += (0..self.n_psi())
                .map(|k| self.blip[(i, k)] * psi[k])
                .sum::<f64>();
        }
        eta
    }

    /// Stacked regressors `Z = [Xᵝ | a ∘ Xᵠ]`.
    fn stacked(&self) -> DMatrix<f64> {
        let (n, pb, pp) = (self.n_rows(), self.n_beta(), self.n_psi());
        DMatrix::from_fn(n, pb + pp, |i, k| {
            if k < pb {
                self.treatment_free[(i, k)]
            } else {
                f64::from(self.treatment[i]) * self.blip[(i, k - pb)]
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Convergence threshold on the ∞-norm of the estimating equations.
    pub tol: f64,
    /// First ridge tried when the Newton system is singular; escalated by
    /// factors of ten up to `max_ridge`. Both are relative to the mean
    /// diagonal of the Newton matrix.
    pub ridge: f64,
    pub max_ridge: f64,
    pub max_halvings: usize,
    /// A coefficient above this magnitude is reported as separation.
    pub divergence_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 100,
            tol: 1e-9,
            ridge: 1e-10,
            max_ridge: 1e-6,
            max_halvings: 30,
            divergence_bound: 30.0,
        }
    }
}

/// Sign structure of the treatment-free Hessian analogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Definiteness {
    NegativeDefinite,
    NegativeSemiDefinite,
    Indefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WglmFit {
    pub beta_hat: Vec<f64>,
    pub psi_hat: Vec<f64>,
    pub iterations: usize,
    /// ∞-norm of the estimating equations at the solution, unit-mean weights.
    pub residual_norm: f64,
    pub hessian: Definiteness,
}

impl WglmFit {
    pub fn linear_predictor(&self, design: &DesignMatrix, i: usize, a: u8) -> f64 {
        design.linear_predictor(i, a, &self.beta_hat, &self.psi_hat)
    }
}

/// Weights rescaled to unit mean.
pub fn normalized_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Domain(format!(
            "weight {w} is negative or not finite"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Domain("weights are all zero".into()));
    }
    let mean = total / weights.len() as f64;
    Ok(weights.iter().map(|w| w / mean).collect())
}

struct Evaluation {
    theta: DVector<f64>,
    eta: DVector<f64>,
    score: DVector<f64>,
    sup: f64,
    l2: f64,
}

struct System<'a> {
    z: DMatrix<f64>,
    y: &'a [f64],
    w: Vec<f64>,
    link: Link,
}

impl System<'_> {
    fn evaluate(&self, theta: DVector<f64>) -> Evaluation {
        let eta = &self.z * &theta;
        let resid = DVector::from_iterator(
            self.y.len(),
            self.y
                .iter()
                .zip(&self.w)
                .zip(eta.iter())
                .map(|((&y, &w), &e)| w * (y - self.link.inverse(e))),
        );
        let score = self.z.tr_mul(&resid);
        let sup = score.amax();
        let l2 = score.norm();
        Evaluation {
            theta,
            eta,
            score,
            sup,
            l2,
        }
    }

    /// `Zᵀ diag(w · (g⁻¹)′(η)) Z`, the negated Jacobian of `U`.
    fn information(&self, eta: &DVector<f64>) -> DMatrix<f64> {
        let mut zw = self.z.clone();
        for (i, mut row) in zw.row_iter_mut().enumerate() {
            row *= self.w[i] * self.link.inverse_derivative(eta[i]);
        }
        self.z.tr_mul(&zw)
    }
}

/// Solves `m x = rhs` for symmetric positive semi-definite `m`, adding a ridge
/// of `ridge · mean(diag m)` (escalated up to `max_ridge`) when the plain
/// Cholesky factorisation fails.
fn solve_psd(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    ridge: f64,
    max_ridge: f64,
) -> Result<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        let x = ch.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let p = m.nrows();
    let scale = (m.trace() / p as f64).abs().max(f64::MIN_POSITIVE);
    let mut lambda = ridge;
    while lambda <= max_ridge * (1.0 + 1e-12) {
        let mut shifted = m.clone();
        for k in 0..p {
            shifted[(k, k)] += lambda * scale;
        }
        if let Some(ch) = shifted.cholesky() {
            let x = ch.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        lambda *= 10.0;
    }
    Err(Error::SingularJacobian { ridge: max_ridge })
}

/// Solve `U(β, ψ) = 0`. `y` may be binary outcomes or probabilities in `[0, 1]`.
pub fn solve_estimating_equations(
    design: &DesignMatrix,
    y: &[f64],
    weights: &[f64],
    link: Link,
    options: &SolverOptions,
) -> Result<WglmFit> {
    let n = design.n_rows();
    let (pb, pp) = (design.n_beta(), design.n_psi());
    if y.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, outcome has {}, weights have {}",
            y.len(),
            weights.len()
        )));
    }
    if n < pb + pp {
        return Err(Error::DimensionMismatch(format!(
            "{n} rows cannot identify {} coefficients",
            pb + pp
        )));
    }
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::Domain(format!(
            "outcome value {v} is outside [0, 1]"
        )));
    }
    let w = normalized_weights(weights)?;
    if pp > 0 {
        for arm in [0u8, 1] {
            let present = design
                .treatment()
                .iter()
                .zip(&w)
                .any(|(&a, &wi)| a == arm && wi > 0.0);
            if !present {
                return Err(Error::EmptyGroup { arm });
            }
        }
    }
    if link != Link::Identity {
        // No finite root when every weighted outcome sits at the same boundary.
        let active = y
            .iter()
            .zip(&w)
            .filter(|(_, &wi)| wi > 0.0)
            .map(|(v, _)| *v);
        let (mut all_zero, mut all_one) = (true, true);
        for v in active {
            all_zero &= v == 0.0;
            all_one &= v == 1.0;
        }
        if all_zero || all_one {
            return Err(Error::Separation {
                magnitude: f64::INFINITY,
            });
        }
    }

    let system = System {
        z: design.stacked(),
        y,
        w,
        link,
    };
    let mut current = system.evaluate(initial_theta(design, &system, options)?);
    let mut iterations = 0;

    while current.sup >= options.tol {
        if iterations == options.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: current.sup,
            });
        }
        iterations += 1;

        let info = system.information(&current.eta);
        let step = solve_psd(&info, &current.score, options.ridge, options.max_ridge)?;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let trial = system.evaluate(&current.theta + &step * scale);
            if trial.l2 < current.l2 || trial.sup < options.tol {
                accepted = Some(trial);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            return Err(Error::NonConvergence {
                iterations,
                residual: current.sup,
            });
        };
        let magnitude = next.theta.amax();
        if magnitude.is_nan() || magnitude > options.divergence_bound {
            return Err(Error::Separation { magnitude });
        }
        current = next;
    }

    let beta_hat: Vec<f64> = current.theta.rows(0, pb).iter().copied().collect();
    let psi_hat: Vec<f64> = current.theta.rows(pb, pp).iter().copied().collect();
    let hessian = check_beta_star_uniqueness(design, &system.w, link, &beta_hat);
    Ok(WglmFit {
        beta_hat,
        psi_hat,
        iterations,
        residual_norm: current.sup,
        hessian,
    })
}

/// Starting point: `β` is the weighted least-squares projection of the constant
/// `g(clamp(ȳ_w))` (`ȳ_w` itself for the identity link) onto the treatment-free columns, `ψ = 0`. With an intercept
/// column this is the null model.
fn initial_theta(
    design: &DesignMatrix,
    system: &System<'_>,
    options: &SolverOptions,
) -> Result<DVector<f64>> {
    let (pb, pp) = (design.n_beta(), design.n_psi());
    let total: f64 = system.w.iter().sum();
    let ybar = system
        .y
        .iter()
        .zip(&system.w)
        .map(|(y, w)| y * w)
        .sum::<f64>()
        / total;
    let target = match system.link {
        Link::Identity => ybar,
        link => link.g(clamp_probability(ybar))?,
    };

    let x = design.treatment_free();
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= system.w[i];
    }
    let gram = x.tr_mul(&xw);
    let rhs = xw.tr_mul(&DVector::from_element(x.nrows(), target));
    let beta = solve_psd(&gram, &rhs, options.ridge, options.max_ridge)
        .unwrap_or_else(|_| DVector::zeros(pb));

    let mut theta = DVector::zeros(pb + pp);
    theta.rows_mut(0, pb).copy_from(&beta);
    Ok(theta)
}

/// Classifies `H(β) = −Σ_{i: aᵢ = 0} wᵢ κ(0, xᵢ) xᵢxᵢᵀ`, the empirical
/// Hessian analogue of the treatment-free estimating equation, with
/// `κ(0, x) = (g⁻¹)′(βᵀx)`.
///
/// Eigenvalues are compared against `1e-10 · max|λ|`, so an all-zero matrix
/// (no untreated rows, or zero weights) is semi-definite.
pub fn check_beta_star_uniqueness(
    design: &DesignMatrix,
    weights: &[f64],
    link: Link,
    beta: &[f64],
) -> Definiteness {
    let pb = design.n_beta();
    let x = design.treatment_free();
    let mut h = DMatrix::<f64>::zeros(pb, pb);
    for (i, &w) in weights.iter().enumerate().take(design.n_rows()) {
        if design.treatment()[i] != 0 || w == 0.0 {
            continue;
        }
        let row = x.row(i);
        let eta = row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        let c = w * link.inverse_derivative(eta);
        for r in 0..pb {
            for s in 0..pb {
                h[(r, s)] -= c * row[r] * row[s];
            }
        }
    }
    classify(h)
}

fn classify(h: DMatrix<f64>) -> Definiteness {
    let eigen = SymmetricEigen::new(h).eigenvalues;
    let scale = eigen.amax();
    let eps = 1e-10 * scale;
    if eigen.iter().all(|&l| l < -eps) {
        Definiteness::NegativeDefinite
    } else if eigen.iter().all(|&l| l <= eps) {
        Definiteness::NegativeSemiDefinite
    } else {
        Definiteness::Indefinite
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn intercept_only(n: usize) -> DesignMatrix {
        DesignMatrix::new(
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::zeros(n, 0),
            vec![0; n],
        )
        .unwrap()
    }

    #[test]
    fn intercept_only_reproduces_weighted_mean() {
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let fit = solve_estimating_equations(
            &intercept_only(8),
            &y,
            &[1.0; 8],
            Link::Logit,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.beta_hat[0], (1.0f64 / 3.0).ln(), epsilon = 1e-10);
        assert!(fit.residual_norm < 1e-9);
    }

    #[test]
    fn saturated_two_group_fit() {
        // Group x = 0 has mean 0.5, group x = 1 has mean 0.8.
        let x0 = [0.0; 10];
        let x1 = [1.0; 10];
        let xs: Vec<f64> = x0.iter().chain(&x1).copied().collect();
        let mut y = vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        y.extend([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let tf = DMatrix::from_fn(20, 2, |i, k| if k == 0 { 1.0 } else { xs[i] });
        let design = DesignMatrix::new(tf, DMatrix::zeros(20, 0), vec![0; 20]).unwrap();
        let fit = solve_estimating_equations(
            &design,
            &y,
            &[1.0; 20],
            Link::Logit,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.beta_hat[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.beta_hat[1], 4.0f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn constant_outcome_is_separation() {
        let err = solve_estimating_equations(
            &intercept_only(5),
            &[1.0; 5],
            &[1.0; 5],
            Link::Logit,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Separation { .. }));
    }

    #[test]
    fn identity_link_constant_outcome_is_fine() {
        let fit = solve_estimating_equations(
            &intercept_only(5),
            &[1.0; 5],
            &[1.0; 5],
            Link::Identity,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.beta_hat[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn perfectly_separated_covariate() {
        let n = 40;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let tf = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { xs[i] });
        let design = DesignMatrix::new(tf, DMatrix::zeros(n, 0), vec![0; n]).unwrap();
        let err = solve_estimating_equations(
            &design,
            &y,
            &vec![1.0; n],
            Link::Logit,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err}");
    }

    #[test]
    fn empty_treatment_arm() {
        let n = 6;
        let tf = DMatrix::from_element(n, 1, 1.0);
        let blip = DMatrix::from_element(n, 1, 1.0);
        let design = DesignMatrix::new(tf, blip, vec![0; n]).unwrap();
        let y = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let err = solve_estimating_equations(
            &design,
            &y,
            &[1.0; 6],
            Link::Logit,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyGroup { arm: 1 }));
    }

    #[test]
    fn design_validation() {
        let n = 4;
        let ones = DMatrix::from_element(n, 1, 1.0);
        let x = DMatrix::from_column_slice(n, 1, &[0.1, 0.2, 0.3, 0.4]);
        // Blip column absent from the treatment-free columns.
        assert!(matches!(
            DesignMatrix::new(ones.clone(), x.clone(), vec![0, 1, 0, 1]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            DesignMatrix::new(DMatrix::zeros(n, 1), DMatrix::zeros(n, 0), vec![0; n]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            DesignMatrix::new(ones, DMatrix::zeros(n, 0), vec![0, 2, 0, 1]),
            Err(Error::NonBinaryValue { row: 1, .. })
        ));
    }

    #[test]
    fn bad_inputs() {
        let d = intercept_only(3);
        let opts = SolverOptions::default();
        assert!(
            solve_estimating_equations(&d, &[0.0, 1.0, 1.5], &[1.0; 3], Link::Logit, &opts)
                .is_err()
        );
        assert!(
            solve_estimating_equations(&d, &[0.0, 1.0, 1.0], &[0.0; 3], Link::Logit, &opts)
                .is_err()
        );
        assert!(solve_estimating_equations(
            &d,
            &[0.0, 1.0, 1.0],
            &[1.0, -1.0, 1.0],
            Link::Logit,
            &opts
        )
        .is_err());
        assert!(
            solve_estimating_equations(&d, &[0.0, 1.0], &[1.0; 3], Link::Logit, &opts).is_err()
        );
    }

    #[test]
    fn uniqueness_diagnostic_cases() {
        let n = 6;
        let xs = [0.1, 0.5, -0.3, 0.9, 1.4, -1.0];
        let tf = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { xs[i] });
        let design = DesignMatrix::new(tf, DMatrix::zeros(n, 0), vec![0; n]).unwrap();
        let beta = [0.2, -0.4];
        assert_eq!(
            check_beta_star_uniqueness(&design, &[1.0; 6], Link::Logit, &beta),
            Definiteness::NegativeDefinite
        );
        assert_eq!(
            check_beta_star_uniqueness(&design, &[0.0; 6], Link::Logit, &beta),
            Definiteness::NegativeSemiDefinite
        );

        // Two identical columns: rank one, so one eigenvalue is zero.
        let dup = DMatrix::from_fn(n, 2, |i, _| xs[i]);
        let design = DesignMatrix::new(dup, DMatrix::zeros(n, 0), vec![0; n]).unwrap();
        assert_eq!(
            check_beta_star_uniqueness(&design, &[1.0; 6], Link::Logit, &beta),
            Definiteness::NegativeSemiDefinite
        );

        // Everyone treated: nothing contributes.
        let tf = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { xs[i] });
        let design = DesignMatrix::new(tf, DMatrix::zeros(n, 0), vec![1; n]).unwrap();
        assert_eq!(
            check_beta_star_uniqueness(&design, &[1.0; 6], Link::Probit, &beta),
            Definiteness::NegativeSemiDefinite
        );
    }
}
