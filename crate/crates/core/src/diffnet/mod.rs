//! Minimal differentiable classifier: dense layers with an optional leading
//! convolution, cross-entropy and friends, and exact reverse-mode gradients
//! with respect to both parameters and inputs.
//!
//! All arithmetic is `f64`; checkpoints store parameters as `f32`.

mod batch;
pub mod checkpoint;
mod config;
mod loss;
mod net;

pub use batch::Batch;
pub use config::{Activation, InputDims, LayerSpec, NetConfig};
pub(crate) use loss::runner_up;
pub use loss::{argmax, softmax, xent_loss, Loss};
pub use net::{DiffNet, Forward, Gradients, LayerParams};
