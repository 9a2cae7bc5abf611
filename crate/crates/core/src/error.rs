use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("unconditionable realization: {0}")]
    UnconditionableRealization(String),

    #[error("well radius exceeds equivalent radius (r_w = {r_w} m, r_0 = {r_0} m)")]
    WellRadiusExceedsEquivalent { r_w: f64, r_0: f64 },

    #[error("simulation diverged after last converged time {last_time_days} days")]
    SimulationDiverged { last_time_days: f64 },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("dataset unreliable: {failed} of {total} simulations failed")]
    DatasetUnreliable { failed: usize, total: usize },

    #[error("backward already called on this tape")]
    BackwardTwice,

    #[error("too many failed RML runs: {failed} of {total}")]
    RmlFailed { failed: usize, total: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
