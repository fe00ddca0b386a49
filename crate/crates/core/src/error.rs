use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("matrix is not a valid plane ({reason})")]
    InvalidPlane { reason: String },

    #[error("leading block is singular in this chart (|det| = {det:.3e})")]
    SingularChart { det: f64 },

    #[error("rank collapse while re-orthonormalizing a frame")]
    RankCollapse,

    #[error("tangent vector check failed: {0}")]
    NotTangent(String),

    #[error("integrand `{label}` returned a non-finite value")]
    NonFinite { label: String },

    #[error("integrand `{label}` is not positive (value {value:.6e})")]
    PositivityViolation { label: String, value: f64 },

    #[error("frame columns are not orthonormal (deviation {deviation:.3e})")]
    NonOrthonormalFrame { deviation: f64 },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("2-vector is not simple (Plücker residual {residual:.3e})")]
    NotSimple { residual: f64 },

    #[error("input vectors are linearly dependent")]
    DependentVectors,

    #[error("norm function failed spot check: {0}")]
    NormCheck(String),

    #[error("empty margin: delta {delta:.6e} does not clear threshold {threshold:.6e}")]
    EmptyMargin { delta: f64, threshold: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid field error: {0}")]
    Field(String),

    #[error("unknown integrand label `{0}`")]
    UnknownIntegrand(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
