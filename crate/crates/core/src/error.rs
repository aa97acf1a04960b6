use thiserror::Error;

/// Errors produced by the array model, solver, duality and selection routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid angle grid: {0}")]
    InvalidGrid(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("SNR is undefined for a scene without sources")]
    UndefinedSnr,

    #[error("index {index} out of range for dictionary with {len} columns")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("columns {indices:?} are rank deficient (rank {rank} < {cols})")]
    RankDeficient {
        indices: Vec<usize>,
        rank: usize,
        cols: usize,
    },

    #[error("decomposition unavailable: {0}")]
    DecompositionUnavailable(String),

    #[error("peak ordering violated: upper peak {hi} is below lower peak {lo}")]
    PeakOrdering { hi: f64, lo: f64 },

    #[error("sparsity order {k0} unreachable: {reason}")]
    OrderUnreachable {
        k0: usize,
        reason: String,
        /// Active-set sizes observed before giving up.
        achieved: Vec<usize>,
        /// Selector steps up to the failure.
        trace: Vec<crate::regpath::TraceEntry>,
    },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}
