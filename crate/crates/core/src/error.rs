use thiserror::Error;

/// Errors produced by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular matrix (zero pivot at column {index})")]
    Singular { index: usize },

    #[error("eigensolver failure: {context}")]
    EigenFailure { context: String },

    #[error("branch ambiguity at {at}: tracked {tracked}, competitor {competitor}")]
    BranchAmbiguity { at: String, tracked: String, competitor: String },

    #[error("reality defect {defect:.3e} exceeds tolerance {tol:.3e} at beta = {at}")]
    RealityDefect { defect: f64, tol: f64, at: String },

    #[error("continuation failed after t = {last_good_t}: {reason}")]
    ContinuationFailure { last_good_t: f64, reason: String },

    #[error("pairing |F| = {value:.3e} below tolerance {tol:.3e}")]
    DegeneratePairing { value: f64, tol: f64 },

    #[error("no convergence in {stage}: {detail}")]
    NoConvergence { stage: String, detail: String },

    #[error("lambda = {lambda} is not in a gap: distance {distance:.3e} to fiber spectrum at k = {at}")]
    NotInGap { lambda: f64, distance: f64, at: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
