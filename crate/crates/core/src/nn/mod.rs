//! Dense tensors, reverse-mode differentiation and parameter storage.

mod params;
mod tape;
mod tensor;

pub use params::{BoundParams, ParamSchema, ParamStore};
pub use tape::{Gradients, Tape, Var, COSINE_NORM_FLOOR};
pub use tensor::Tensor;
