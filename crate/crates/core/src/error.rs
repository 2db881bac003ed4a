use alloc::string::String;

/// Crate-wide error type.
///
/// Numerical code raises rather than silently propagating NaN/Inf or
/// mismatched shapes; the trainer aborts runs on any of these.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("backward root must be a scalar")]
    NonScalarRoot,
    #[error("unknown parameter: {0}")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
}
