//! Dense f64 tensors with reverse-mode automatic differentiation on a
//! define-by-run tape.
//!
//! Broadcasting is deliberately narrow: bias vectors onto matrix rows
//! ([`Tape::add_row_bias`]) and per-row scalars onto matrix rows
//! ([`Tape::mul_col`]). Everything else requires explicit shapes.

mod tape;
mod tensor;

pub mod finite_diff;

pub use tape::{GradStore, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite value produced by op `{0}`")]
    NonFinite(&'static str),
}
