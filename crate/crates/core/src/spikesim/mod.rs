//! Time-stepped, event-driven inference of converted spiking networks.
//!
//! Spikes travel between layers as bit-packed vectors. Each spike carries the
//! threshold of the layer that emitted it as its amplitude, so hidden binary
//! layers compute `amplitude · alpha · (popcount(s & plus) - popcount(s & minus))`
//! and share their weights unchanged with the source network.

mod engine;
mod neuron;

pub use engine::{
    early_exit_inference, run_inference, write_results_csv, write_trace_csv, InferenceResult, LayerActivity,
    SampleResult, SimConfig, Simulator, StepRecord, WeightActivity,
};
pub use neuron::{binary_dot, binary_dot_count, binary_matvec, if_step, NeuronState, SimState, SpikeVector};

use thiserror::Error;

use crate::graph::{GraphError, Violation};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("early-exit inference needs a confidence threshold")]
    MissingTheta,
    #[error("graph is not a spiking network")]
    NotSpiking,
    #[error("invalid spiking graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("image shape {got:?} does not match model input {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
