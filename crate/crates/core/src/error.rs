use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point outside chart domain: {0}")]
    Domain(String),
    #[error("divergent integral: {0}")]
    Divergence(String),
    #[error("metric not positive definite (eigenvalue {eigenvalue})")]
    NotPositiveDefinite { eigenvalue: f64 },
    #[error("numerical convergence failure: {0}")]
    Convergence(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
