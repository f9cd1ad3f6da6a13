//! Dense tensors with tape-based reverse-mode gradients, MLP layers with
//! sinusoidal time conditioning, Adam, and a binary checkpoint format.

mod adam;
mod checkpoint;
mod mlp;
mod param;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use mlp::{apply_layers, embed_times, sinusoidal_embed, Activation, Layer, Mlp, MlpSpec};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{backward, gradients, NodeId, Tape, TapeGrads};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("parameter `{0}` changed since the tape was recorded")]
    StaleTape(String),
    #[error("embedding dimension {0} must be even and at least 2")]
    OddDim(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
