//! Dense matrices, the reverse-mode tape, and parameter groups with SGD.

mod matrix;
mod params;
mod tape;

pub use matrix::DenseMatrix;
pub use params::{glorot_uniform, sgd_step, ParamGroup};
pub use tape::{Gradients, ParamId, Tape, Var};

pub(crate) use tape::log_sum_exp;
