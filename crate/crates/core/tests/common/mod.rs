//! Independent reference implementations shared by integration tests.

use dwglm::links::expit;
use dwglm::DesignMatrix;
use nalgebra::{DMatrix, DVector};

/// Textbook weighted logistic regression by Fisher scoring on `[xᵝ, a·xᵠ]`.
pub fn fisher_scoring(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> DVector<f64> {
    let (n, p) = x.shape();
    let mut b = DVector::zeros(p);
    for _ in 0..100 {
        let mut info = DMatrix::zeros(p, p);
        let mut score = DVector::zeros(p);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let mu = expit(xi.dot(&b));
            score += &xi * (w[i] * (y[i] - mu));
            info += &xi * xi.transpose() * (w[i] * mu * (1.0 - mu));
        }
        let step = info.lu().solve(&score).expect("nonsingular information");
        b += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    b
}

pub fn stacked(design: &DesignMatrix) -> DMatrix<f64> {
    let n = design.n_rows();
    let (pb, pp) = (design.n_beta(), design.n_psi());
    DMatrix::from_fn(n, pb + pp, |i, k| {
        if k < pb {
            design.treatment_free()[(i, k)]
        } else {
            f64::from(design.treatment()[i]) * design.blip()[(i, k - pb)]
        }
    })
}
