use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter set violates a physical validity condition.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Two arrays that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A reduction was requested over an empty set.
    #[error("empty region: {0}")]
    EmptyRegion(String),

    /// Mask optimization found no pixel carrying signal.
    #[error("no signal: every pixel has zero SNR")]
    NoSignal,
}

pub type Result<T> = std::result::Result<T, Error>;
