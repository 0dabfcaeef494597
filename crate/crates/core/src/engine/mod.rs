//! Training engine for [`ModelGraph`](crate::graph::ModelGraph)s: batched
//! forward and reverse-mode passes over `f64` tensors, Adam with a step-decay
//! schedule, and the recurrent cell used by the policy-gradient controller.

mod checkpoint;
mod model;
mod ops;
mod optim;
mod policy;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{Gradients, Mode, ModelInstance, Trace, BN_EPSILON, BN_MOMENTUM};
pub use optim::{learning_rate, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use policy::{PolicyGrads, PolicyNet, Rollout, LSTM_UNITS};
pub use tensor::Tensor;
pub use train::{accuracy, predict_classes, train, EpochStats, TrainConfig};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
