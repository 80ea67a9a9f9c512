//! Minimal differentiable-computation layer: dense tensors, a reverse-mode
//! tape, parameterized layers, Adam, and checkpoint serialization.

mod adam;
mod checkpoint;
mod conv;
mod layers;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::Checkpoint;
pub use conv::conv_out_size;
pub use layers::{lstm_cell, Conv2d, Linear, LstmLayer, Mlp};
pub use params::{random_orthogonal, Init, ParamId, ParameterSet};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub mod gradcheck;

#[cfg(test)]
mod op_tests;
