use thiserror::Error;

/// Errors raised by the simulator and its numerical kernels.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverNotConverged { iterations: usize, residual: f64 },

    #[error("time step {dt:e} exceeds the advective stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: u64,
        #[source]
        source: Box<SimError>,
    },

    #[error("replica {replica} (seed {seed}) failed: {source}")]
    ReplicaFailed {
        replica: u64,
        seed: u64,
        #[source]
        source: Box<SimError>,
    },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
