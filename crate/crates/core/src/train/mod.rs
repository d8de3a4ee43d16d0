//! Gradient training of constrained networks: full-precision training,
//! weight binarization with a straight-through estimator, and evaluation.

mod binarize;
mod network;
mod optim;
mod trainer;

pub use binarize::{
    binarize_activations_sign, binarize_weights, effective_weights, sign_activation_backward, ste_weight_grad,
    BinarizedWeights, BinaryRow,
};
pub(crate) use binarize::words_for;
pub use network::{backward, forward_eval, forward_observe, forward_train, forward_weight, Tape, TrainContext};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use trainer::{
    evaluate_ann, predict_ann, train, write_log_csv, Activation, EpochLog, Phase, TrainOutcome, TrainSchedule,
    PHASE_KEY,
};

use thiserror::Error;

use crate::graph::GraphError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("layer {0} has no weight tensor")]
    MissingWeight(usize),
    #[error("operation requires an ANN-mode graph")]
    WrongMode,
    #[error("input shape {got:?} does not match model input {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("binarization requires a full-precision checkpoint")]
    MissingCheckpoint,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
