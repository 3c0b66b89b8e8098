use alloc::string::String;

use crate::covmodel::Latent;

/// Errors raised by the covariance, predictor, estimator and fitting routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("design is missing required field `{0}`")]
    MissingDesignField(&'static str),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("parameter `{name}` has invalid value {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue}, largest {max_eigenvalue})")]
    NotPositiveSemidefinite { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("matrix is not positive definite, factorization failed after jitter")]
    NotPositiveDefinite,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("latent component `{0}` does not exist under this covariance model")]
    UnknownComponent(Latent),

    #[error("unknown covariance parameter `{0}`")]
    UnknownParameter(String),

    #[error("unknown latent component name `{0}`")]
    UnknownComponentName(String),

    #[error("fold count {k} is out of range for n = {n}")]
    FoldCount { k: usize, n: usize },

    #[error("prediction scenarios with a marginal shift between training and target data are not supported")]
    MarginalShift,

    #[error("denominator {0} is too close to zero")]
    DegenerateDenominator(f64),

    #[error("empty model list")]
    EmptyModelList,
}

pub type Result<T> = core::result::Result<T, Error>;
