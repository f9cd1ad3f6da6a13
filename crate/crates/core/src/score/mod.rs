//! Score network with an intermediate pathway, denoising score-matching
//! targets and losses, and the α-weighted training loop.

mod loss;
mod net;
mod train;

pub use loss::{
    dsm_target_em, dsm_target_gaussian, loss_igo, loss_multi, loss_standard, total_loss,
    IterateSlice, Lambda, TrainBatch,
};
pub use net::{Pathway, ScoreNet, ScoreNetSpec};
pub use train::{
    assemble_batch, train, train_with, ForwardProcess, IgoConfig, LogRecord, TauRule,
    TrainingLog,
};

use thiserror::Error;

use crate::nn::NnError;
use crate::sde::SdeError;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error("conditional variance vanishes at t={0}")]
    ZeroVariance(f64),
    #[error("diffusion is zero in component {0}")]
    DegenerateDiffusion(usize),
    #[error("no intermediate iterates supplied")]
    EmptyIterateList,
    #[error("training diverged at step {0}")]
    DivergedTraining(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
