use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("cannot read data source {path}: {source}")]
    DataSource {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {what}, row {row}, column {column}: {reason}")]
    MalformedData {
        what: String,
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("simulation already finished after {0} steps")]
    Finished(usize),

    #[error("simulation not finished (at step {step} of {horizon})")]
    NotFinished { step: usize, horizon: usize },

    #[error("expected {expected} actions, got {got}")]
    ActionShape { expected: usize, got: usize },

    #[error("replay format version {found} is not supported (expected {expected})")]
    ReplayVersion { found: u32, expected: u32 },

    #[error("replay decode failed: {0}")]
    ReplayDecode(String),

    #[error("empty EV registry or zero total sales weight")]
    EmptyRegistry,

    #[error("controller {controller} needs {needs}, which the {problem} problem does not expose")]
    Capability {
        controller: String,
        needs: &'static str,
        problem: String,
    },

    #[error("instance too large to enumerate: {plans} plans exceed the limit of {limit}")]
    TooLarge { plans: f64, limit: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn malformed(what: impl Into<String>, row: usize, column: usize, reason: impl Into<String>) -> Self {
        SimError::MalformedData {
            what: what.into(),
            row,
            column,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
