//! Dense 64-bit tensors with a recording tape for reverse-mode gradients,
//! a parameter store and an Adam optimizer.
//!
//! The op vocabulary is deliberately small: everything the recommender and
//! diffusion losses need, nothing more. See [`tape`] for the shape rules.

mod error;
pub mod gradcheck;
mod optim;
mod param;
mod sparse;
pub mod tape;
mod tensor;

pub use error::{DiffError, Result};
pub use optim::{Adam, AdamConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
