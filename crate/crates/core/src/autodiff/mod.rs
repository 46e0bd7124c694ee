//! Reverse-mode automatic differentiation over dense row-major tensors.

mod params;
mod tape;
mod tensor;

#[cfg(test)]
mod tests;

pub use params::{sgd_step, Direction, Grads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_values;
