//! Differentiable layers recorded on an autodiff [`Tape`](crate::autodiff::Tape).
//!
//! Convolutions are cross-correlations (no kernel flip).

mod conv;
pub mod init;
mod loss;
mod pool;
mod spatial;

use crate::autodiff::{add_bias, matmul, Tape, Var};
use crate::error::Result;

pub use conv::{conv2d, tconv2d};
pub use loss::{channel_softmax, cross_entropy, pixel_softmax_loss, softmax, LOG_FLOOR};
pub use pool::{maxpool2, relu};
pub use spatial::{add_elementwise, center_offset, concat_channels, crop, crop_to};

/// `x[N×in] · W[in×out] + b[out]`.
pub fn fully_connected(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = matmul(tape, x, weight)?;
    add_bias(tape, y, bias)
}
