//! MLM and AR training: masking semantics, joint token/number loss, cosine
//! learning-rate schedule with warmup, and Adam with decoupled weight decay.

mod loss;
mod mask;
mod optimizer;
mod schedule;
mod trainer;

pub use loss::{compute_loss, eval_loss, LossNodes, LossValues};
pub use mask::{apply_mlm_mask, ar_targets, collate, targeted_mask, MaskedBatch, MaskedSample};
pub use optimizer::AdamW;
pub use schedule::lr_at;
pub use trainer::{batch_indices, train, SpecialIds, StepMetrics, TrainState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Mode, ModelError};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("step {0} outside schedule of {1} steps")]
    StepOutOfRange(u64, u64),
    #[error("mask span {0} out of range ({1} numbers in sample)")]
    SpanOutOfRange(usize, usize),
    #[error("non-finite loss at step {step} (batch ids {batch_ids:?})")]
    NonFiniteLoss { step: u64, batch_ids: Vec<usize> },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, TrainError>;

fn default_lr_min_ratio() -> f64 {
    0.1
}
fn default_warmup() -> u64 {
    2000
}
fn default_mask_prob() -> f64 {
    0.2
}
fn default_weight_decay() -> f64 {
    0.1
}
fn default_lambda() -> f64 {
    1.0
}
fn default_grad_clip() -> f64 {
    1.0
}
fn default_log_interval() -> u64 {
    50
}
fn default_checkpoint_interval() -> u64 {
    1000
}
fn default_precision() -> String {
    "f32".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    #[serde(default = "default_lr_min_ratio")]
    pub lr_min_ratio: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    #[serde(default = "default_mask_prob")]
    pub mask_prob: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_lambda")]
    pub number_loss_weight: f64,
    pub seed: u64,
    pub mode: Mode,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: u64,
    #[serde(default = "default_precision")]
    pub precision: String,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Mlm && !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(TrainError::BadConfig(format!(
                "mask_prob {} not in (0, 1)",
                self.mask_prob
            )));
        }
        if !(0.0 < self.lr_min_ratio && self.lr_min_ratio <= 1.0) {
            return Err(TrainError::BadConfig(format!(
                "lr_min_ratio {} not in (0, 1]",
                self.lr_min_ratio
            )));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(TrainError::BadConfig(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be positive".into()));
        }
        if self.precision != "f32" && self.precision != "f64" {
            return Err(TrainError::BadConfig(format!(
                "precision {:?} must be f32 or f64",
                self.precision
            )));
        }
        Ok(())
    }
}
