use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("target effect is not identifiable: {0}")]
    Unidentifiable(String),

    #[error("IRLS did not converge after {iterations} iterations (deviance {deviance})")]
    NonConvergence {
        iterations: usize,
        deviance: f64,
        /// Coefficients of the last iterate.
        last: Vec<f64>,
    },

    #[error("degenerate model: {reason}")]
    Degenerate {
        reason: String,
        /// Coefficients of the last iterate, target coefficient first for full fits.
        last: Vec<f64>,
    },

    #[error("flip {flip} has zero variance ({value:e}); standardized statistic undefined")]
    ZeroVariance { flip: usize, value: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("too many failed replications: {failed} of {total}")]
    FailureBudget { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Input problems (as opposed to numerical failures), used for CLI exit codes.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Unidentifiable(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
