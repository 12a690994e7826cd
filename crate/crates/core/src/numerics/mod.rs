//! Dense tensors, reverse-mode differentiation and gradient verification.

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, finite_diff_check};
pub use params::{truncated_normal, Bound, ParamId, ParamLeaf, ParamTree, INIT_STD};
pub use scalar::Scalar;
pub use tape::{softmax_rows, Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{gemm, Tensor};
