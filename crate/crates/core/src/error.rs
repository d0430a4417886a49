use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A row of an input file could not be decoded.
    #[error("row {row}: field `{field}`: {message}")]
    Parse {
        row: usize,
        field: String,
        message: String,
    },

    /// A decoded record violates the match schema.
    #[error("schema error in match `{match_id}`: {message}")]
    Schema { match_id: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("causality violation: match `{match_id}` at t={timestamp} precedes already applied t={last}")]
    OutOfOrder {
        match_id: String,
        timestamp: i64,
        last: i64,
    },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("perfect separation detected along `{direction}`; fit did not converge")]
    Separation { direction: String },

    #[error("singular information matrix")]
    Singular,

    #[error("column `{column}` is collinear with earlier columns")]
    Collinear { column: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fit did not converge after {iterations} iterations (gradient max-norm {gradient:e})")]
    NotConverged { iterations: usize, gradient: f64 },

    #[error("cluster-robust covariance needs at least two clusters")]
    SingleCluster,

    #[error("term `{0}` is not in the model")]
    UnknownTerm(String),

    #[error("missing feature `{0}`")]
    MissingFeature(String),

    #[error("empty holdout")]
    EmptyHoldout,

    #[error("insufficient range: {0}")]
    InsufficientRange(String),

    #[error("degenerate quantiles: {0}")]
    DegenerateQuantiles(String),

    #[error("{0}")]
    Config(String),

    /// A pipeline stage failed.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SingleClass
            | Error::Separation { .. }
            | Error::Singular
            | Error::Collinear { .. }
            | Error::NotConverged { .. }
            | Error::SingleCluster
            | Error::InsufficientRange(_)
            | Error::DegenerateQuantiles(_) => ErrorClass::Numeric,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
