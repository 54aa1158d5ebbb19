//! Multimodal attention transformer: GP-completed daily time series
//! enter as one token per day, encoded static features as a single
//! projected token, plus a learned CLS token whose final representation
//! drives an MLP classification head. Includes the time-series-only
//! (unimodal) ablation, analytic backpropagation, and Adam training.

mod model;
mod params;
mod train;

pub use model::{assemble_sequence, forward, loss_and_gradients, Batch};
pub use params::{FusionModel, ParamTensor};
pub use train::{predict, train, Checkpoint, EpochStats, TrainConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite activation in block {block}")]
    NonFinite { block: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Multimodal,
    UnimodalTs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ff_dim: usize,
    pub head_dim: usize,
    pub dropout_rate: f64,
    pub max_seq_len: usize,
    pub mode: FusionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_blocks: 2,
            ff_dim: 128,
            head_dim: 32,
            dropout_rate: 0.1,
            max_seq_len: crate::WINDOW_DAYS + 2,
            mode: FusionMode::Multimodal,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Token count for a time-series length: CLS + static token + T in
    /// multimodal mode, CLS + T otherwise.
    pub fn seq_len(&self, t_len: usize) -> usize {
        match self.mode {
            FusionMode::Multimodal => t_len + 2,
            FusionMode::UnimodalTs => t_len + 1,
        }
    }
}
