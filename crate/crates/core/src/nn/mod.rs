//! Dense MLP engine: specs, flat parameters, forward/backward passes and SGD.

pub mod gradcheck;
mod matrix;
mod network;
mod params;
mod spec;

pub use matrix::Matrix;
pub use network::{Batch, Gradients, Network, Trace};
pub use params::{DenseBlock, DenseParams, GradVector, Layout, ParamIndex, ParamKind, ParamVector};
pub use spec::{Activation, LayerSpec, NetworkSpec, Preset, DEFAULT_LEAKY_SLOPE, MNIST_HIDDEN, RING_HIDDEN};
