use thiserror::Error;

/// Errors produced by link evaluation, the steppers, the benchmark and the metrics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite gradient entry at coordinate {0}")]
    NonFiniteGradient(usize),

    #[error("every weight vanished before normalization (step size too large)")]
    DegenerateState,

    #[error("initial Frank-Wolfe gap is not positive; the start point is already optimal")]
    DegenerateStart,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("no closed-form group law registered for `{0}`")]
    UnsupportedFamily(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips any iteration context and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at(self, iteration: usize) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
