//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{check_primitives, grad_check, grad_check_many, relative_error, GradCheckReport, RELATIVE_FLOOR};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
