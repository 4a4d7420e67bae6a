use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("length mismatch: expected {expected}, got {got} ({context})")]
    LengthMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("non-finite value at index {index} ({context})")]
    NonFinite { index: usize, context: String },

    #[error("ROI '{label}' has no member pixels")]
    EmptyRoi { label: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model infeasible: bin {bin} has zero expected counts but {observed} observed")]
    InfeasibleBin { bin: usize, observed: f64 },

    #[error("line search failed at iteration {iteration}: {reason}")]
    LineSearch { iteration: usize, reason: String },

    #[error("non-finite state in {context} at outer iteration {iteration}")]
    NonFiniteState { context: String, iteration: usize },

    #[error("missing input: {0}")]
    MissingInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: config problems map to 2, everything
    /// else to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json { .. } | Error::InvalidArgument(_) => 2,
            _ => 3,
        }
    }
}
