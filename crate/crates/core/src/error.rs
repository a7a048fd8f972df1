use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or config field violates its admissible range.
    #[error("invalid parameter `{field}`: {message}")]
    Invalid { field: &'static str, message: String },

    /// The requested operation is only defined for a sub-family of models.
    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("could not bracket the maximiser of h at u = {u}: no decrease after {doublings} doublings")]
    NonCoercive { u: f64, doublings: u32 },

    #[error("fixed point did not converge after {iterations} iterations (last sup-norm change {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("ensemble carries no Brownian increments; re-simulate instead of loading from disk")]
    MissingIncrements,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            message: message.into(),
        }
    }
}
