use thiserror::Error;

/// Errors raised by models, compression operators and the federated loops.
#[derive(Debug, Error)]
pub enum Error {
    #[error("worker index {index} out of range (n = {workers})")]
    WorkerIndex { index: usize, workers: usize },

    #[error("example index {index} out of range for worker {worker} (m = {examples})")]
    ExampleIndex {
        worker: usize,
        index: usize,
        examples: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("mixture component {component} has vanishing weight {weight:e}")]
    DegenerateComponent { component: usize, weight: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("inconsistent state: {0}")]
    InconsistentState(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("trace is empty")]
    EmptyTrace,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
