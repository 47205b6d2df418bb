use thiserror::Error;

/// Failure modes shared by every sampler in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate particle cloud: {0}")]
    DegenerateCloud(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("capability unavailable: {0}")]
    Capability(String),
    #[error("no particle survived level {level}: {detail}")]
    ZeroSurvivors { level: usize, detail: String },
    #[error("nested sampling made no progress for {iterations} iterations at log-likelihood {log_likelihood}")]
    StuckRun {
        iterations: usize,
        log_likelihood: f64,
    },
    #[error("threshold failed to increase for {0} consecutive iterations")]
    NonProgress(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::ContractViolation(msg.into())
}
