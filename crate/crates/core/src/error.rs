use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix block {block} is singular")]
    Singular { block: String },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("{q} binary variables exceeds the enumeration cap of {cap}")]
    EnumerationCap { q: usize, cap: usize },

    #[error("unsupported dimension {dim} (at most {max})")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid index partition: {0}")]
    InvalidPartition(String),

    #[error("nothing observed")]
    NothingObserved,

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown binarize rule '{0}'")]
    UnknownRule(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}
