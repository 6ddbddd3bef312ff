use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("sector detection failed: {0}")]
    DetectionFailure(String),

    #[error("ambiguous sector: {0}")]
    Ambiguous(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("line {line}: field `{field}`: {reason}")]
    Parse {
        line: usize,
        field: &'static str,
        reason: String,
    },

    #[error("unknown {kind} token `{token}` (valid: {valid})")]
    Enumeration {
        kind: &'static str,
        token: String,
        valid: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient population: need at least {needed} patients, got {got}")]
    InsufficientPopulation { needed: usize, got: usize },

    #[error("transform error: {0}")]
    Transform(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("detector backend `{backend}` failed: {reason}")]
    Backend { backend: String, reason: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
