//! Dense tensors and reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use tape::{Gradients, Tape, Var, RMS_NORM_EPS};
pub use tensor::Tensor;
