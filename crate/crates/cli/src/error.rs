use bsnn::convert::ConvertError;
use bsnn::graph::GraphError;
use bsnn::metrics::MetricsError;
use bsnn::spikesim::SimError;
use bsnn::train::TrainError;
use serde::Serialize;
use thiserror::Error;

/// Errors the CLI raises itself, before or around library calls.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    MissingDependency(String),
    #[error("{0}")]
    InvalidArgument(String),
}

pub fn dependency(msg: impl Into<String>) -> anyhow::Error {
    CliError::MissingDependency(msg.into()).into()
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    CliError::InvalidArgument(msg.into()).into()
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
}

fn is_missing_checkpoint(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(e.downcast_ref::<TrainError>(), Some(TrainError::MissingCheckpoint))
            || matches!(
                e.downcast_ref::<ConvertError>(),
                Some(ConvertError::MissingThreshold { .. } | ConvertError::Train(TrainError::MissingCheckpoint))
            )
    })
}

fn is_format(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<GraphError>(),
            Some(
                GraphError::BadMagic(_)
                    | GraphError::UnsupportedVersion(_)
                    | GraphError::Truncated(_)
                    | GraphError::OverlappingOffsets { .. }
                    | GraphError::Malformed(_)
                    | GraphError::Invalid(_)
            )
        ) || matches!(e.downcast_ref::<ConvertError>(), Some(ConvertError::Format(_) | ConvertError::Csv(_)))
    })
}

fn is_invalid_config(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(e.downcast_ref::<TrainError>(), Some(TrainError::InvalidConfig(_) | TrainError::InputShape { .. }))
            || matches!(
                e.downcast_ref::<ConvertError>(),
                Some(ConvertError::InvalidPercentile(_) | ConvertError::ArchMismatch { .. })
            )
            || matches!(
                e.downcast_ref::<SimError>(),
                Some(SimError::InvalidConfig(_) | SimError::InputShape { .. })
            )
            || matches!(e.downcast_ref::<MetricsError>(), Some(MetricsError::InvalidSweep(_)))
    })
}

impl ErrorRecord {
    pub fn from_error(err: &anyhow::Error) -> Self {
        let kind = match err.downcast_ref::<CliError>() {
            Some(CliError::MissingDependency(_)) => "missing-dependency",
            Some(CliError::InvalidArgument(_)) => "invalid-argument",
            None if is_missing_checkpoint(err) => "missing-dependency",
            None if is_format(err) => "invalid-input",
            None if is_invalid_config(err) => "invalid-argument",
            None => "failed",
        };
        let message = err.chain().map(|e| e.to_string()).collect::<Vec<_>>().join(": ");
        Self { kind, message }
    }
}
