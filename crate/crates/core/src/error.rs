use thiserror::Error;

/// Errors raised by model construction, inference and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("observation has zero likelihood under the current belief (component {component})")]
    ImpossibleObservation { component: usize },

    #[error("inconsistent decorrelation flags for component {component}")]
    InconsistentDecorrelation { component: usize },

    #[error("transition row ({rate}, {bin}) received zero samples")]
    EmptyTransitionRow { rate: usize, bin: usize },

    #[error("state enumeration over {n_elements} elements exceeds the capacity limit of {limit}")]
    Capacity { n_elements: usize, limit: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint was trained against a different environment (expected hash {expected}, found {found})")]
    HashMismatch { expected: String, found: String },

    #[error("malformed resistance table: {0}")]
    ResistanceTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
