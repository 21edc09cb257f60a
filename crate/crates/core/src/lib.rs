//! Doubly-robust estimation of optimal dynamic treatment regimes for binary
//! outcomes by dynamic weighted generalized linear models (dWGLM).

pub mod checks;
pub mod commands;
pub mod data;
pub mod dtr;
pub mod error;
pub mod estimators;
pub mod io;
pub mod links;
pub mod model;
pub mod rng;
pub mod simulation;
pub mod solver;
pub mod weights;

pub use data::{LongitudinalDataset, StageData};
pub use error::{Error, Result};
pub use estimators::{estimate_dtr, DtrEstimate, EstimatorConfig, Method, StageEstimate};
pub use links::Link;
pub use model::{StageModelSpec, Term};
pub use solver::{solve_estimating_equations, DesignMatrix, SolverOptions, WglmFit};
