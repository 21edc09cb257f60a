//! Stage model specifications.
//!
//! A stage has three linear models, each with an implicit intercept:
//! the treatment-free model (`hᵝ`), the blip model (`hᵠ`) and the treatment
//! model (`hᵅ`). Terms are products of factors written `name` or `name@k`:
//!
//! * `x` is covariate `x` at the stage being modelled (or a baseline column),
//! * `x@1` is covariate `x` recorded at stage 1,
//! * `a@1` is the stage-1 treatment when `a` is the treatment column,
//! * `o@1:a@1` is the product of the two.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Factor {
    pub name: String,
    /// 1-based stage; `None` means the stage being modelled.
    pub stage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    pub factors: Vec<Factor>,
    /// Marks a term that the misspecification scenarios drop.
    pub nonlinear: bool,
}

impl Term {
    pub fn nonlinear(expr: &str) -> Term {
        let mut t: Term = expr.parse().expect("valid term");
        t.nonlinear = true;
        t
    }

    pub fn linear(expr: &str) -> Term {
        expr.parse().expect("valid term")
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let factors =
            s.split(':')
                .map(|raw| {
                    let raw = raw.trim();
                    let (name, stage) = match raw.split_once('@') {
                        Some((name, k)) => {
                            let k: usize = k.trim().parse().map_err(|_| {
                                Error::Config(format!("bad stage index in term '{s}'"))
                            })?;
                            if k == 0 {
                                return Err(Error::Config(format!(
                                    "stages are numbered from 1 in term '{s}'"
                                )));
                            }
                            (name.trim(), Some(k))
                        }
                        None => (raw, None),
                    };
                    if name.is_empty() {
                        return Err(Error::Config(format!("empty factor in term '{s}'")));
                    }
                    Ok(Factor {
                        name: name.to_string(),
                        stage,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
        Ok(Term {
            factors,
            nonlinear: false,
        })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, factor) in self.factors.iter().enumerate() {
            if i > 0 {
                f.write_str(":")?;
            }
            f.write_str(&factor.name)?;
            if let Some(k) = factor.stage {
                write!(f, "@{k}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Column selections for one stage. Intercepts are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageModelSpec {
    pub treatment_free: Vec<Term>,
    pub blip: Vec<Term>,
    pub treatment: Vec<Term>,
}

impl StageModelSpec {
    /// Every blip term must also be a treatment-free term.
    pub fn validate(&self) -> Result<()> {
        for term in &self.blip {
            if !self.treatment_free.iter().any(|t| same_term(t, term)) {
                return Err(Error::Config(format!(
                    "blip term '{term}' is missing from the treatment-free model"
                )));
            }
        }
        Ok(())
    }

    /// Names of the blip coefficients, intercept first.
    pub fn blip_names(&self) -> Vec<String> {
        names(&self.blip)
    }

    pub fn treatment_free_names(&self) -> Vec<String> {
        names(&self.treatment_free)
    }

    pub fn treatment_names(&self) -> Vec<String> {
        names(&self.treatment)
    }
}

pub const INTERCEPT: &str = "(intercept)";

fn names(terms: &[Term]) -> Vec<String> {
    std::iter::once(INTERCEPT.to_string())
        .chain(terms.iter().map(|t| t.to_string()))
        .collect()
}

fn same_term(a: &Term, b: &Term) -> bool {
    a.factors == b.factors
}
