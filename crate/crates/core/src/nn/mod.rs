//! A small double-precision feedforward network engine.

pub mod checkpoint;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;

pub use layers::Layer;
pub use loss::{
    cross_entropy, cross_entropy_batch, softmax, softmax_l2_distance, softmax_rows, transfer_loss, SoftmaxOutput,
};
pub use model::{argmax, Checksum, GradientTape, Gradients, Model, Param, Preset, Provenance, Trace};
pub use optim::{sgd_step, SgdState, TrainConfig};
pub use tensor::Tensor;
