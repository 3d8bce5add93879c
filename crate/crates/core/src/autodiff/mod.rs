//! Reverse-mode automatic differentiation and the momentum optimizer.

pub mod check;
pub mod ops;
mod optim;
mod tape;

pub use ops::{add, add_bias, flatten, matmul, mul, reshape, scale, shift, sub, sum};
pub use optim::Sgd;
pub use tape::{Gradients, Tape, Var};
pub(crate) use tape::Backward;
