use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to act on the
/// failure without re-deriving it from the call site.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("illegal severity {severity} for condition {kind}")]
    IllegalSeverity { kind: String, severity: String },

    #[error("invalid vertebra label: {0}")]
    InvalidVertebra(String),

    #[error("need more than {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("age bracket {0} has no subjects")]
    EmptyBracket(u32),

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("volume container error: {0}")]
    VolumeFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
