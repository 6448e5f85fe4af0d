use thiserror::Error;

/// Errors produced by the fusion library.
#[derive(Debug, Error)]
pub enum FusionError {
    #[error("grid mismatch: expected {expected}, found {found}")]
    GridMismatch { expected: String, found: String },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {block} at iteration {iter}")]
    NonFinite { iter: usize, block: &'static str },

    #[error("dense oracle refuses grid with {n_h} pixels (limit {limit})")]
    SizeGuard { n_h: usize, limit: usize },

    #[error("solver state needs {estimate_bytes} bytes, budget is {budget_bytes} bytes")]
    MemoryBudget {
        estimate_bytes: u64,
        budget_bytes: u64,
    },

    #[error("sampling mask keeps no pixels")]
    EmptyMask,

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FusionError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> FusionError {
    FusionError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn shape(
    what: &'static str,
    expected: impl ToString,
    found: impl ToString,
) -> FusionError {
    FusionError::ShapeMismatch {
        what,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
