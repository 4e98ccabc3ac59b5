//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the numeric core.
///
/// Variants are coarse on purpose: callers branch on the *kind* of
/// failure (bad shapes vs. bad values vs. numerical divergence), and the
/// message carries the human-readable detail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Operands have incompatible shapes or lengths.
    ShapeMismatch(String),
    /// An index or range lies outside its container.
    OutOfRange(String),
    /// An argument violates a documented precondition.
    InvalidArgument(String),
    /// An iterative computation produced non-finite values or failed to
    /// converge within its documented budget.
    Divergence(String),
}

impl CoreError {
    pub fn shape(msg: impl Into<String>) -> Self {
        CoreError::ShapeMismatch(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        CoreError::OutOfRange(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    pub fn divergence(msg: impl Into<String>) -> Self {
        CoreError::Divergence(msg.into())
    }
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            CoreError::OutOfRange(m) => write!(f, "out of range: {m}"),
            CoreError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            CoreError::Divergence(m) => write!(f, "numerical divergence: {m}"),
        }
    }
}

impl core::error::Error for CoreError {}
