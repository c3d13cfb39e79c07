//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod grad_check;
mod params;
mod tape;

pub use grad_check::grad_check;
pub use params::{Grads, ParamGrad, ParamId, ParamSet};
pub use tape::{masked_softmax_raw, Binary, Reduction, Tape, Unary, Var};
pub(crate) use tape::norm2;
#[cfg(test)]
pub(crate) use tape::{matmul_raw, sigmoid};
