//! Sequential layer IR for constrained networks, the architectural variants,
//! and the on-disk model/dataset containers.

mod build;
mod container;
mod ir;

pub use build::{build_network, DepthConfig};
pub use container::{
    dataset_from_bytes, dataset_to_bytes, load_dataset, load_model, model_from_bytes, model_to_bytes,
    save_dataset, save_model, Dataset, DATASET_MAGIC, FORMAT_VERSION, MODEL_MAGIC,
};
pub use ir::{
    validate, ArchOption, LayerKind, LayerSpec, Mode, ModelGraph, ParamKey, ParamRole, ResetMode, Violation,
    ACTIVATION_KEY, SIGN_ACTIVATION,
};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("layer {layer}: {reason}")]
    ShapeChain { layer: usize, reason: String },
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("graph failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("not a {0} container")]
    BadMagic(String),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("manifest offsets overlap at byte {offset}")]
    OverlappingOffsets { offset: u64 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
