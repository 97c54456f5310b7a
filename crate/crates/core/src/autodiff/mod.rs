//! Dense tensors, a reverse-mode differentiation tape and the Adam optimizer.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::grad_check;
pub use tape::{logsumexp, Tape, Var};
pub use tensor::Tensor;
