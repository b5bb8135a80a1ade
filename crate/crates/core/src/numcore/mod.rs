//! Dense matrices, feed-forward networks with hand-derived backpropagation, and Adam.

mod matrix;
mod net;
mod optim;

pub use matrix::{dot, squared_distance, Matrix};
pub use net::{Activation, DenseNet, Gradients, Layer, LayerGrad, Trace};
pub use optim::{optimizer_step, AdamConfig, OptimizerState};
