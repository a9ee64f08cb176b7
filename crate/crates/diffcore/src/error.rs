use thiserror::Error;

use crate::tape::OpKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: OpKind,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: unsupported shape {shape:?} ({reason})")]
    BadShape {
        op: OpKind,
        shape: Vec<usize>,
        reason: &'static str,
    },

    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: OpKind },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("non-finite gradient in parameter `{name}`; optimizer step skipped")]
    NonFiniteGradient { name: String },

    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: OpKind,
        index: usize,
        extent: usize,
    },
}

pub type Result<T> = std::result::Result<T, DiffError>;
