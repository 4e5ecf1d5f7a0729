//! A small define-by-run reverse-mode differentiation engine over `f64`
//! tensors.

mod gemm;
mod optim;
mod tape;
mod tensor;

pub use optim::Sgd;
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
