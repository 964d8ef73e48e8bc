//! Losses, class weighting, the Adam optimizer and the training loop.

mod adam;
mod loss;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use loss::{
    class_probs, dice_loss, loss, median_freq_weights, weighted_ce, ClassProbs, ClassWeights, LossConfig, LossKind,
    MedianTag, DEFAULT_DICE_EPSILON, LOG_CLAMP,
};
pub use trainer::{class_weights_for, train, EarlyStop, StepRecord, TrainOutcome, TrainRun, Trainer};

use thiserror::Error;

use crate::data::DataError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("numerical failure at step {step} (epoch {epoch}, batch {batch}): {msg}")]
    Numerical { step: u64, epoch: usize, batch: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Hook(String),
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::Numerical { .. }
                | TrainError::NonFiniteGradient { .. }
                | TrainError::Tensor(TensorError::NonFinite { .. } | TensorError::LogDomain(_))
        )
    }
}
