use thiserror::Error;

use crate::population::TreatmentId;

/// Errors raised by the data model, auditors, estimators and bounds.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown treatment {0}")]
    UnknownTreatment(TreatmentId),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("common support violated: no units with treatment {treatment} in {group}")]
    SupportViolation {
        group: String,
        treatment: TreatmentId,
    },

    #[error("{0}")]
    MissingOracle(&'static str),

    #[error("predictor `{predictor}` is undefined at ({x}, t={t})")]
    PredictorUndefined {
        predictor: String,
        x: String,
        t: TreatmentId,
    },

    #[error("weight function is undefined or invalid at ({x}, t={t})")]
    WeightUndefined { x: String, t: TreatmentId },

    #[error("covariate value {value} is {problem} in the partition")]
    Partition {
        value: String,
        problem: &'static str,
    },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("level set of treatment {treatment} ({level_set}): {source}")]
    LevelSet {
        treatment: TreatmentId,
        level_set: String,
        #[source]
        source: Box<Error>,
    },

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("no instrument value reaches mean treatment {target} within {gamma}; closest achievable is {closest} (z={closest_z})")]
    NoQualifyingInstrument {
        target: f64,
        gamma: f64,
        closest: f64,
        closest_z: u32,
    },

    #[error("mismatched reports: {0}")]
    Mismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("internal identity check failed: {0}")]
    Identity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
