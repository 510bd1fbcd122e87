//! A BERT-style encoder with a tied masked-language-model head.
//!
//! Forward and backward passes are written out by hand over `f64`
//! matrices; one sequence is processed at a time, so no padding mask is
//! needed.

mod checkpoint;
mod masking;
mod network;
mod optim;
mod train;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use masking::{mask_batch, mask_sequence, MaskedSequence, MaskingPolicy};
pub use network::{forward_hidden_states, mlm_loss, mlm_loss_and_grad, Encoder};
pub use optim::Adam;
pub use train::{evaluate_loss, frame, init_model, train, EpochLog, TrainOptions, TrainRun};
pub use weights::{LayerWeights, Weights};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("bad checkpoint file: {0}")]
    BadCheckpoint(String),
    #[error("no training sequences")]
    NoTrainingData,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Includes the `[CLS]` and `[SEP]` positions.
    pub max_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Small configuration that trains in minutes on a CPU.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 4,
            ffn_dim: 256,
            max_len: 128,
            vocab_size,
            seed: 0,
        }
    }

    /// Twelve layers, 768 wide.
    pub fn bert_base(vocab_size: usize) -> Self {
        Self {
            num_layers: 12,
            hidden_dim: 768,
            num_heads: 12,
            ffn_dim: 3072,
            max_len: 512,
            vocab_size,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::InvalidConfig(m));
        if self.num_layers == 0 || self.hidden_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return err("layer, width, head and ffn counts must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return err(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.max_len < 3 {
            return err("max_len must leave room for [CLS] and [SEP]".into());
        }
        if self.vocab_size <= crate::corpus::SPECIAL_TOKENS.len() {
            return err(format!(
                "vocab_size {} leaves no room beyond the special tokens",
                self.vocab_size
            ));
        }
        Ok(())
    }
}
