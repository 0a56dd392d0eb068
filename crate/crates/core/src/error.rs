use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance model does not define a valid joint law of value and Hessian: {0}")]
    InadmissibleMoments(String),

    #[error("singular map: {0}")]
    SingularMap(String),

    #[error("Hessian eigenvalue {eigenvalue:e} is within the Morse tolerance {tolerance:e}")]
    NearSingularHessian { eigenvalue: f64, tolerance: f64 },

    #[error("non-Morse critical point at {location:?}: eigenvalue {eigenvalue:e} within tolerance {tolerance:e}")]
    NonMorse {
        location: Vec<f64>,
        eigenvalue: f64,
        tolerance: f64,
    },

    #[error("inverse map did not converge for target {target:?} (residual {residual:e})")]
    InverseNotConverged { target: Vec<f64>, residual: f64 },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
