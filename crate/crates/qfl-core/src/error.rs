use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {index} out of range for {qubit_count}-qubit register")]
    QubitOutOfRange { index: usize, qubit_count: usize },

    #[error("qubit count mismatch: expected {expected}, got {actual}")]
    QubitCountMismatch { expected: usize, actual: usize },

    #[error("register of {0} qubits is not supported (1..={max})", max = crate::qsim::MAX_QUBITS)]
    UnsupportedQubitCount(usize),

    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("objective returned non-finite value {value} at evaluation {index}")]
    NonFiniteObjective { value: f64, index: usize },

    #[error("non-finite parameter at index {0}")]
    NonFiniteParameter(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("key too short: need {needed} bits, have {available}")]
    KeyTooShort { needed: usize, available: usize },

    #[error("key compromised: QBER {qber:.4} exceeds abort threshold {threshold}")]
    KeyCompromised { qber: f64, threshold: f64 },

    #[error("class {class} has {available} samples, fewer than the {required} required")]
    InsufficientClassSamples { class: usize, available: usize, required: usize },

    #[error("split plan needs {needed} samples but dataset has {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
