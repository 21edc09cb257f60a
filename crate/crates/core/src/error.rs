use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("estimating equations did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("Newton system is singular even with ridge {ridge:.1e}")]
    SingularJacobian { ridge: f64 },

    #[error("perfect separation: |coefficient| reached {magnitude:.3e}")]
    Separation { magnitude: f64 },

    #[error("treatment group {arm} is empty")]
    EmptyGroup { arm: u8 },

    #[error("stage {stage}: only {converged} of {total} replicates converged")]
    AllReplicatesFailed {
        stage: usize,
        converged: usize,
        total: usize,
    },

    #[error("stage {stage}{}: {source}", replicate.map(|r| format!(", replicate {r}")).unwrap_or_default())]
    Stage {
        stage: usize,
        replicate: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} replications failed for method {method}")]
    TooManyFailures {
        method: String,
        failed: usize,
        total: usize,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("row {row}, column '{column}': value {value} is not binary (0/1)")]
    NonBinaryValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("subject '{subject}' has {found} of {expected} stages")]
    RaggedStages {
        subject: String,
        found: usize,
        expected: usize,
    },

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: usize, replicate: Option<usize>) -> Self {
        Error::Stage {
            stage,
            replicate,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
