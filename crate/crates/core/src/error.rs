use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient ({context})")]
    RankDeficient { context: String },

    #[error("logistic fit diverged: data are (quasi-)completely separated")]
    Separated,

    #[error("solver did not converge after {iterations} iterations (score norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("response indicator has only one class")]
    OneClassOnly,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("basis requires fitted propensities but none were supplied")]
    MissingPropensity,

    #[error("too few complete cases: {available} available, {required} required")]
    TooFewCompleteCases { available: usize, required: usize },

    #[error("no complete cases (t = 1) in the data")]
    NoCompleteCases,

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("shrinkage weight must lie in [0, 1], got {0}")]
    InvalidLambda(f64),

    #[error("influence-function correction matrix is singular")]
    SingularCorrection,

    #[error("need at least {required} replicates, got {available}")]
    InsufficientReplicates { available: usize, required: usize },

    #[error("every replicate failed")]
    AllFailed,
}

impl Error {
    pub(crate) fn rank(context: impl Into<String>) -> Self {
        Error::RankDeficient {
            context: context.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
