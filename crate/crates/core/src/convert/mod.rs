//! ANN-to-SNN conversion: activation statistics, percentile threshold
//! balancing, and the graph rewrite from ReLU to integrate-and-fire layers.

mod calibrate;
mod rewrite;

pub use calibrate::{
    calibration_subset, compute_thresholds, nearest_rank, read_profile_csv, record_activation_stats,
    write_profile_csv, ActivationStats, SiteStats, ThresholdEntry, ThresholdProfile,
};
pub use rewrite::{
    conversion_report, convert_to_snn, if_sites, read_report_csv, write_report_csv, ConversionConfig,
    InsertedThreshold, IfSite, SiteKind, SiteRow,
};

use thiserror::Error;

use crate::graph::{GraphError, Violation};
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("percentile {0} outside (0, 100]")]
    InvalidPercentile(f64),
    #[error("degenerate threshold {value} at site {site}")]
    DegenerateThreshold { site: usize, value: f32 },
    #[error("no threshold for IF site {site}")]
    MissingThreshold { site: usize },
    #[error("conversion config is for {config} but the model uses {model}")]
    ArchMismatch { config: String, model: String },
    #[error("source graph is not a valid ANN: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSource(Vec<Violation>),
    #[error("converted graph failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidResult(Vec<Violation>),
    #[error("unsupported conversion: {0}")]
    Unsupported(String),
    #[error("malformed CSV: {0}")]
    Format(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
