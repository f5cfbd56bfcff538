//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, randomize_uniform, relative_error, CoordinateFailure, GradCheckConfig, GradCheckReport,
};
pub use params::{Gradients, ParamGrad, ParamId, ParamStore, Parameter};
pub use rng::RngStream;
pub use tape::{kl_term, sigmoid_scalar, Axis, Mark, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_rows;
