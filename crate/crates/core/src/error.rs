use thiserror::Error;

/// Errors raised by the optimization engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported derivative order {order} (supported: 1..={max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    /// The accuracy loop kept tightening past any representable accuracy.
    #[error("accuracy exhausted for order {order} after {tightenings} tightenings")]
    AccuracyExhausted { order: usize, tightenings: usize },

    /// An outcome that the convergence theory rules out was observed past the
    /// point where it could be blamed on rounding.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
