//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Every loss term in [`crate::objective`] is expressed as a sequence of ops
//! recorded on a [`Tape`]; [`Tape::backward`] then returns exact analytic
//! gradients. [`finite_difference_check`] compares those against central
//! differences.

mod array;
mod check;
mod tape;

#[cfg(test)]
mod tests;

pub use array::{log_softmax_row, softmax_row, Array};
pub use check::{finite_difference_check, relative_error};
pub use tape::{Node, Op, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("invalid construction: {0}")]
    Construction(String),
    #[error("domain error in {op} at index {index}: value {value}")]
    Domain { op: &'static str, index: usize, value: f64 },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite function value {value} during finite-difference check")]
    NonFinite { value: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}
