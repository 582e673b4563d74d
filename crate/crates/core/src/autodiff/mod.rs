//! Dense tensors and reverse-mode differentiation.

mod check;
pub mod ops;
mod tape;
mod tensor;

pub use check::{finite_difference_check, GradCheck};
pub use ops::ConvGeometry;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
