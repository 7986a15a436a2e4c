use thiserror::Error;

pub type Result<T> = std::result::Result<T, GstError>;

#[derive(Debug, Error)]
pub enum GstError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing gate: {0}")]
    MissingGate(String),

    #[error("non-principal-log: {0}")]
    NonPrincipalLog(String),

    #[error("simulation domain error: {0}")]
    SimulationDomain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("informational incompleteness: {msg} (singular values {spectrum:?})")]
    InformationalIncompleteness { msg: String, spectrum: Vec<f64> },

    #[error("dataset is missing {} circuit(s): {}", .0.len(), .0.join(", "))]
    MissingCircuits(Vec<String>),

    #[error("germ set is not amplificationally complete (rank {achieved} of {required}); unamplified directions: {}", .unamplified.join("; "))]
    NotAmplificationallyComplete {
        achieved: usize,
        required: usize,
        unamplified: Vec<String>,
    },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("branch ambiguity: {0}")]
    BranchAmbiguity(String),

    #[error("bootstrap failure: {0}")]
    Bootstrap(String),

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GstError::InvalidArgument(msg.into()))
}
