use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed audio: {0}")]
    Format(String),

    #[error("unsupported audio encoding: {0}")]
    Unsupported(String),

    #[error("clip too short: {0}")]
    TooShort(String),

    #[error("term does not fit the target length: {0}")]
    Truncation(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate codeword {0}: zero norm")]
    DegenerateCodeword(usize),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("undefined entropy: codebook has no recorded usage")]
    UndefinedEntropy,

    #[error("negative sampling failed: {0}")]
    Sampling(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite values during optimization.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
