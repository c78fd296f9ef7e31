//! Minimal reverse-mode autodiff over dense 5-axis tensors: just the ops
//! the segmentation network needs.

pub mod ops;
pub mod optim;
pub mod params;
mod scalar;
mod tape;
mod tensor;

pub use optim::{AdamW, AdamWConfig};
pub use params::{fan_in_uniform, Ctx, ParamSet};
pub use scalar::Scalar;
pub use tape::{BackwardFn, Grads, Tape, Var};
pub use tensor::Tensor;
