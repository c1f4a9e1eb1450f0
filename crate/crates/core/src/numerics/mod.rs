//! Dense 64-bit tensors, a recording tape for reverse-mode gradients, the
//! LSTM cell, Adam, finite-difference checking and weight checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod lstm;
mod params;
mod tensor;

pub use adam::{adam_update, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{affine, sigmoid, Activation, Graph, Var};
pub use lstm::{lstm_step, lstm_step_projected, run_lstm, LstmParams};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::{softmax, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Dimension {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
