//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] replays it in
//! reverse from a scalar root. Tapes are single-threaded and are dropped
//! after each training step.

mod gradcheck;
mod linalg;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, REL_ERR_FLOOR};
pub use ops::{affine, concat, sigmoid_f64, softplus_f64, MIN_ROW_NORM};
pub use tape::{Gradients, Tape, Value, Var};
pub use tensor::{Parameter, Tensor};
