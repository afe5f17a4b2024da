use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid problem or solver configuration (shapes, parameters, marginals).
    #[error("configuration error: {0}")]
    Config(String),
    /// Invalid input data handed to an operation.
    #[error("input error: {0}")]
    Input(String),
    /// A map was queried outside the region where it is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Breakdown of a numerical routine (NaN, failed root find, mass drift).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// An iterative inner solver ran out of iterations.
    #[error("no convergence after {iters} iterations (residual {residual:e})")]
    Convergence { iters: usize, residual: f64 },
    /// Malformed field or log file.
    #[error("format error: {0}")]
    Format(String),
    /// Malformed run configuration text.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
