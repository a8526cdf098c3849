use thiserror::Error;

/// Errors raised by the estimation, testing and federation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MediationError {
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteInput { row: usize, column: String },

    #[error("column `{0}` has zero variance")]
    ZeroVarianceColumn(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need at least {required} observations, got {got}")]
    TooFewObservations { required: usize, got: usize },

    #[error("dataset must be centred before computing sufficient statistics")]
    NotCentred,

    #[error("treatment vector has zero norm")]
    DegenerateTreatment,

    #[error("composite lies in the span of the treatment (w'Vw below tolerance)")]
    DegenerateComposite,

    #[error("structural path is empty: {0}")]
    DegeneratePath(&'static str),

    #[error("symmetric factorisation failed: {0}")]
    FactorisationFailure(String),

    #[error("kernel matrix has no eigenvalue above the cutoff")]
    ZeroKernel,

    #[error("{0}")]
    RegimeUnsupported(String),

    #[error("cosine {0} lies outside [-1, 1]")]
    InvalidCosine(f64),

    #[error("insufficient degrees of freedom: {0}")]
    InsufficientDf(String),

    #[error("metric matrix is not positive definite")]
    SingularMetric,

    #[error("population path vector is zero")]
    ZeroPathVector,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("feature order mismatch between sites `{first}` and `{other}`")]
    FeatureOrderMismatch { first: String, other: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, MediationError>;
