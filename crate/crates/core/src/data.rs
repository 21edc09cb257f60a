use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{StageModelSpec, Term};
use crate::solver::DesignMatrix;

/// Covariates and treatment recorded at one stage, stored column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageData {
    pub treatment: Vec<u8>,
    pub covariates: BTreeMap<String, Vec<f64>>,
}

/// Subjects followed over `K` stages with a final binary outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    pub subject_ids: Vec<String>,
    /// Name under which stage treatments are referenced in model terms.
    pub treatment_name: String,
    /// Subject-level columns visible from every stage.
    pub baseline: BTreeMap<String, Vec<f64>>,
    pub stages: Vec<StageData>,
    pub outcome: Vec<u8>,
    pub design_weights: Option<Vec<f64>>,
}

impl LongitudinalDataset {
    pub fn n_subjects(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Checks lengths, binary values and non-negative design weights.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_subjects();
        if self.stages.is_empty() {
            return Err(Error::Config("dataset has no stages".into()));
        }
        if self.subject_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} subject ids for {n} outcomes",
                self.subject_ids.len()
            )));
        }
        if let Some(i) = self.outcome.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryValue {
                row: i,
                column: "outcome".into(),
                value: self.outcome[i].to_string(),
            });
        }
        for (j, stage) in self.stages.iter().enumerate() {
            if stage.treatment.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "stage {} has {} treatments for {n} subjects",
                    j + 1,
                    stage.treatment.len()
                )));
            }
            if let Some(i) = stage.treatment.iter().position(|&v| v > 1) {
                return Err(Error::NonBinaryValue {
                    row: i,
                    column: format!("{}@{}", self.treatment_name, j + 1),
                    value: stage.treatment[i].to_string(),
                });
            }
            for (name, col) in &stage.covariates {
                if col.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "column {name}@{} has {} values for {n} subjects",
                        j + 1,
                        col.len()
                    )));
                }
            }
        }
        for (name, col) in &self.baseline {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "column {name} has {} values for {n} subjects",
                    col.len()
                )));
            }
        }
        if let Some(w) = &self.design_weights {
            if w.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} design weights for {n} subjects",
                    w.len()
                )));
            }
            if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Domain(format!(
                    "design weight {v} is negative or not finite"
                )));
            }
        }
        Ok(())
    }

    /// Values of `term` for every subject when modelling `stage` (1-based).
    pub fn term_values(&self, term: &Term, stage: usize) -> Result<Vec<f64>> {
        let mut out = vec![1.0; self.n_subjects()];
        for factor in &term.factors {
            let k = factor.stage.unwrap_or(stage);
            if k > stage {
                return Err(Error::Config(format!(
                    "term '{term}' at stage {stage} looks ahead to stage {k}"
                )));
            }
            let data = self.stages.get(k - 1).ok_or_else(|| {
                Error::Config(format!("term '{term}' refers to missing stage {k}"))
            })?;
            let column: Vec<f64> = if factor.name == self.treatment_name {
                if factor.stage.is_none() || k == stage {
                    return Err(Error::Config(format!(
                        "term '{term}' uses the current treatment as a covariate"
                    )));
                }
                data.treatment.iter().map(|&a| f64::from(a)).collect()
            } else if let Some(c) = data.covariates.get(&factor.name) {
                c.clone()
            } else if let (None, Some(c)) = (factor.stage, self.baseline.get(&factor.name)) {
                c.clone()
            } else {
                return Err(Error::MissingColumn(match factor.stage {
                    Some(k) => format!("{}@{k}", factor.name),
                    None => factor.name.clone(),
                }));
            };
            if let Some(i) = column.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: i,
                    column: term.to_string(),
                    message: format!("missing or non-finite value at stage {stage}"),
                });
            }
            for (o, v) in out.iter_mut().zip(column) {
                *o *= v;
            }
        }
        Ok(out)
    }

    /// Intercept column followed by one column per term.
    pub fn model_matrix(&self, terms: &[Term], stage: usize) -> Result<DMatrix<f64>> {
        let n = self.n_subjects();
        let mut m = DMatrix::from_element(n, terms.len() + 1, 1.0);
        for (k, term) in terms.iter().enumerate() {
            let values = self.term_values(term, stage)?;
            m.set_column(k + 1, &nalgebra::DVector::from_vec(values));
        }
        Ok(m)
    }

    /// Treatment-free/blip design and treatment-model matrix for `stage`.
    pub fn stage_design(
        &self,
        spec: &StageModelSpec,
        stage: usize,
    ) -> Result<(DesignMatrix, DMatrix<f64>)> {
        spec.validate()?;
        let tf = self.model_matrix(&spec.treatment_free, stage)?;
        let blip = self.model_matrix(&spec.blip, stage)?;
        let alpha = self.model_matrix(&spec.treatment, stage)?;
        let design = DesignMatrix::new(tf, blip, self.stages[stage - 1].treatment.clone())?;
        Ok((design, alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_stage() -> LongitudinalDataset {
        let mut s1 = BTreeMap::new();
        s1.insert("x".to_string(), vec![1.0, 2.0, 3.0]);
        let mut s2 = BTreeMap::new();
        s2.insert("x".to_string(), vec![4.0, 5.0, 6.0]);
        LongitudinalDataset {
            subject_ids: vec!["a".into(), "b".into(), "c".into()],
            treatment_name: "a".into(),
            baseline: BTreeMap::from([("sex".to_string(), vec![0.0, 1.0, 1.0])]),
            stages: vec![
                StageData {
                    treatment: vec![1, 0, 1],
                    covariates: s1,
                },
                StageData {
                    treatment: vec![0, 0, 1],
                    covariates: s2,
                },
            ],
            outcome: vec![1, 0, 1],
            design_weights: None,
        }
    }

    #[test]
    fn resolves_history_terms() {
        let d = two_stage();
        assert_eq!(
            d.term_values(&Term::linear("x"), 2).unwrap(),
            vec![4.0, 5.0, 6.0]
        );
        assert_eq!(
            d.term_values(&Term::linear("x@1"), 2).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            d.term_values(&Term::linear("a@1:x@1"), 2).unwrap(),
            vec![1.0, 0.0, 3.0]
        );
        assert_eq!(
            d.term_values(&Term::linear("sex:x"), 1).unwrap(),
            vec![0.0, 2.0, 3.0]
        );
    }

    #[test]
    fn rejects_bad_references() {
        let d = two_stage();
        assert!(matches!(
            d.term_values(&Term::linear("x@2"), 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            d.term_values(&Term::linear("a"), 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            d.term_values(&Term::linear("a@2"), 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            d.term_values(&Term::linear("z"), 2),
            Err(Error::MissingColumn(_))
        ));
        assert!(matches!(
            d.term_values(&Term::linear("sex@1"), 2),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn validation() {
        let mut d = two_stage();
        assert!(d.validate().is_ok());
        d.stages[1].treatment[0] = 2;
        assert!(matches!(d.validate(), Err(Error::NonBinaryValue { .. })));
        let mut d = two_stage();
        d.design_weights = Some(vec![1.0, -1.0, 1.0]);
        assert!(d.validate().is_err());
    }
}
