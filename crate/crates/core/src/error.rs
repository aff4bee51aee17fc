use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transport solver failed after {pivots} pivots: {reason}")]
    Solver { pivots: usize, reason: String },

    #[error("entropic solver did not converge in {iterations} iterations (marginal error {marginal_error:e})")]
    Convergence {
        iterations: usize,
        marginal_error: f64,
    },

    #[error("density bound violated at t = {t} (ratio {ratio})")]
    Verification { t: f64, ratio: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
