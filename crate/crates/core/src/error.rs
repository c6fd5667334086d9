use thiserror::Error;

/// Errors raised by the numerical workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// A point came within the exclusion margin of the singular sets `c - K = 0` or `K' = 0`,
    /// or a transcendental function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid too small: need at least {needed} samples per axis, got {got}")]
    GridTooSmall { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("invalid condition form: {0}")]
    InvalidForm(String),

    /// Initial or iterate data with `c - K_r <= eps` at the listed samples.
    #[error("infeasible exponent data at samples {samples:?} (minimum margin {margin:e})")]
    Infeasible { samples: Vec<usize>, margin: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
        history: Vec<f64>,
        /// Samples of the best iterate, when the solver has one.
        best_iterate: Vec<f64>,
    },

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures the CLI classifies as numerical (exit code 3).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Infeasible { .. }
                | Error::NonConvergence { .. }
                | Error::Precondition(_)
        )
    }
}
