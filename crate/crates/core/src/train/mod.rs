//! Training: single stages, whole cascades, checkpoints and logs.

mod cascade;
mod checkpoint;
mod log;
mod stage;

pub use cascade::{
    ground_truth_conditions, predicted_conditions, prepare_samples, train_cascade, CascadeTraining, TrainOutput,
    STAGE1_CHECKPOINT, STAGE1_LOG, STAGE2_CHECKPOINT, STAGE2_LOG,
};
pub use checkpoint::{TrainState, OPTIMIZER_MAGIC, OPTIMIZER_VERSION};
pub use log::{EpochRecord, TrainLog, LOG_HEADER};
pub use stage::{run_stage, train_stage, validate, StageKind, TrainSample};

use crate::dataio::AugmentConfig;
use crate::error::{Error, Result};

/// Source of the prostate mask that conditions stage 2 during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// Masks derived from the annotations.
    GroundTruth,
    /// Masks predicted by the already trained stage 1.
    Predicted,
}

/// Optimization settings. The loss is always categorical cross entropy and
/// the optimizer ADAM.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub stage2_conditioning: Conditioning,
    /// Learning rate of epoch `e` (1-based) is `learning_rate * lr_decay^(e-1)`.
    pub lr_decay: f64,
    /// Stop after this many epochs without a lower validation loss; 0 disables.
    pub early_stopping_patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.0005,
            batch_size: 5,
            epochs: 50,
            seed: 0,
            augment: true,
            augmentation: AugmentConfig::default(),
            stage2_conditioning: Conditioning::GroundTruth,
            lr_decay: 1.0,
            early_stopping_patience: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs ≥ 1 required".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size ≥ 1 required".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }
}
