//! Error type shared by the tensor engine and the model stack.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A shape is invalid on its own (wrong rank, indivisible extent, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration violates one of its invariants.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract (non-scalar loss,
    /// missing class token, consumed tape, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Batch statistics are undefined (fewer than two elements per channel).
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// A forward pass produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
