use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates a type invariant. The message names the field.
    #[error("{0}")]
    InvalidParams(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("tail index undefined (OU limit) for coordinate {coord}")]
    TailIndexUndefined { coord: usize },

    #[error("not codiagonalizable: {0}")]
    NotCodiagonalizable(String),

    #[error("non-normalizable: tail index {kappa} must be < -1/2")]
    NonNormalizable { kappa: f64 },

    #[error("numerical overflow on path {path} at step {step} (|v| > 1e12); step size too large for these parameters")]
    Overflow { path: usize, step: u64 },

    #[error("horizon too short: all {n_paths} paths censored")]
    HorizonTooShort { n_paths: usize },

    #[error("degenerate coupling: mean squared distance is zero at t = {time}")]
    DegenerateCoupling { time: f64 },

    #[error("contraction constant non-positive: 2h - eta*rho = {c}")]
    ContractionNonPositive { c: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular tridiagonal system at row {row}")]
    SingularSystem { row: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }

    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams(_)
                | Error::Config { .. }
                | Error::Json(_)
                | Error::Precondition(_)
                | Error::NotCodiagonalizable(_)
                | Error::TailIndexUndefined { .. }
                | Error::NonNormalizable { .. }
                | Error::ContractionNonPositive { .. }
        )
    }
}
