use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain [{a}, {b}]: need finite a < b")]
    InvalidDomain { a: f64, b: f64 },

    #[error("invalid knots: {0}")]
    InvalidKnots(String),

    #[error("spline order {order} unsupported here (need at least {needed})")]
    UnsupportedOrder { order: usize, needed: usize },

    #[error("time {t} outside basis domain [{a}, {b}]")]
    OutOfRange { t: f64, a: f64, b: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("rank-deficient loadings: eigenvalue ratio {ratio:e} below threshold")]
    RankDeficient { ratio: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("non-finite log-likelihood contribution for curve {id}")]
    NumericalOverflow { id: String },

    #[error("model and data bases differ: {0}")]
    BasisMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("fit failed at d = {d}: {source}")]
    Selection {
        d: usize,
        #[source]
        source: Box<Error>,
        /// Rows completed before the failure.
        partial: Box<crate::selection::SelectionReport>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
