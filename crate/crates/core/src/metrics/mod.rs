//! Operation counts, spiking-rate based energy proxies, crossbar row
//! activity, and accuracy/latency curves.

mod crossbar;
mod curves;
mod ops;

pub use crossbar::{area_factor, crossbar_activity, CrossbarLayer, CrossbarModel, Encoding};
pub use curves::{
    accuracy_curve, exit_at_theta, exit_histogram, percentile_sweep, record_curves, select_theta,
    theta_candidates, timesteps_to_target, write_rows_csv, CurvePoint, Curves, HistBin, PercentileCurve, SweepSpec,
    ThetaPoint,
};
pub use ops::{
    conv_ops, effective_bits, graph_layer_ops, layer_ops, linear_ops, normalized_ops, LayerOps, OpsReport,
};

use thiserror::Error;

use crate::convert::ConvertError;
use crate::graph::GraphError;
use crate::spikesim::SimError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no operation count for {0} layers")]
    UnsupportedLayer(String),
    #[error("missing spiking rate for weight layer {layer}")]
    MissingIfr { layer: usize },
    #[error("inference result carries no per-timestep trajectories")]
    MissingTrajectories,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Convert(#[from] ConvertError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
