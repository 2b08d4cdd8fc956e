//! Small convolutional network with training and guided backward passes.

pub mod layer;
pub mod network;
pub mod serialize;

pub use layer::{relu_backward, BackwardRule, LayerSpec, Params};
pub use network::{ForwardTrace, Gradients, Network, Node, ValueId};
