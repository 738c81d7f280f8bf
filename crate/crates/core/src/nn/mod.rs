//! A small CPU deep-learning engine: tensors, an autodiff graph, 1D
//! convolutional layers, Adam and a checkpoint format.

mod checkpoint;
mod embedding;
mod graph;
mod kernels;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    OptimizerSnapshot,
};
pub use embedding::{sinusoidal_embedding, sinusoidal_embeddings};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{BatchNorm1d, Conv1d, ConvTranspose1d, Linear, Mode};
pub use optim::{adam_step, lr_schedule, AdamState};
pub use params::{LayerParams, Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
