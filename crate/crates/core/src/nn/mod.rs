//! Minimal dense layer engine with exact backpropagation.

pub mod checkpoint;
pub mod layers;
mod network;
pub mod presets;

pub use network::{ForwardCache, ForwardOutput, Gradients, LayerSpec, Network};
