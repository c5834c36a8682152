use thiserror::Error;

/// Errors raised by tape construction, backward passes, and optimizers.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, lhs {lhs:?} vs rhs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: operand shape {shape:?} not accepted")]
    BadShape { op: &'static str, shape: (usize, usize) },
    #[error("backward root must be a scalar, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}
