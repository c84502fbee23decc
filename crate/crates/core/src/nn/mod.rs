//! Minimal tensor math and a u-net trained with exact backpropagation.

pub mod adam;
pub mod io;
pub mod layers;
pub mod loss;
pub mod tensor;
pub mod unet;

pub use adam::{AdamConfig, AdamState};
pub use tensor::Tensor;
pub use unet::{Gradients, Tape, UNetConfig, UNetParams};
