//! Reverse-mode automatic differentiation over dense real arrays.
//!
//! A [`Tape`] records primitive applications in creation order. Leaves are
//! either trainable parameters or constants; [`Tape::backward`] walks the
//! records in reverse and returns a [`Gradients`] table keyed by [`Var`].
//! Tapes are meant to live for one training step and then be dropped.

mod finite_diff;
mod primitives;
mod real;
mod tape;
mod tensor;

pub use finite_diff::{finite_difference_gradient, gradients_agree, relative_error};
pub use primitives::{Attrs, Padding, PrimitiveKind};
pub use real::{DType, Real};
pub use tape::{Gradients, Tape, Var};
pub(crate) use tensor::fnv1a;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("primitive {op} expects {expected} input(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("primitive {op} was given attributes it does not accept: {attrs}")]
    BadAttrs { op: &'static str, attrs: String },
    #[error("{op}: value {value} outside the primitive's domain")]
    Domain { op: &'static str, value: f64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable {0} does not belong to this tape")]
    ForeignVar(usize),
}

pub type Result<T, E = DiffError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests;
