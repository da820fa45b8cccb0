use thiserror::Error;

/// Errors raised by the solvers and the instance loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An explicit enumeration (tuples, subsets, LP bases) would exceed its cap.
    #[error(
        "{what} needs {needed} elements, above the cap of {cap}; use global resolution instead"
    )]
    TooLarge {
        what: &'static str,
        needed: u128,
        cap: u128,
    },

    /// A global-resolution solve terminated early where a result was required.
    #[error("solver terminated early: {0}")]
    SolveFailed(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
