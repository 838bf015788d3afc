//! Minimal reverse-mode automatic differentiation in `f64`.

mod adam;
pub mod gradcheck;
mod layers;
mod param;
mod tape;
mod tensor;

pub use adam::Adam;
pub use layers::{kaiming_uniform, Conv2d, Linear, Mlp};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
