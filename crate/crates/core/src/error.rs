use thiserror::Error;

/// Errors raised while building or applying the mortar Schwarz pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("subdomain mesh needs at least 2 cells per axis, got {0}")]
    TooFewCells(usize),

    #[error("nonpositive coefficient {value} on subdomain {subdomain}, triangle {triangle}")]
    NonPositiveCoefficient {
        subdomain: usize,
        triangle: usize,
        value: f64,
    },

    #[error("coefficient field does not match mesh of subdomain {subdomain}: {reason}")]
    FieldMismatch { subdomain: usize, reason: String },

    #[error("nonmortar side of interface {interface} has no interior nodes")]
    EmptyNonmortarSide { interface: usize },

    #[error("singular nonmortar mass matrix on interface {interface}")]
    SingularMortarMass { interface: usize },

    #[error("degree of freedom classification error: {0}")]
    DofClassification(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("coarse Gram matrix is rank deficient after adding subdomain {subdomain}")]
    RankDeficientCoarse { subdomain: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dense condition number needs {size} dofs but the cap is {cap}; use the Lanczos estimate")]
    DenseCapExceeded { size: usize, cap: usize },

    #[error("Lanczos estimate needs at least 3 PCG iterations, got {0}")]
    InsufficientIterations(usize),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
