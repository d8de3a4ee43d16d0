use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::graph::{LayerKind, ModelGraph};
use crate::spikesim::InferenceResult;

/// `in_planes · kh · kw · out_planes · oh · ow`.
pub fn conv_ops(in_planes: usize, kh: usize, kw: usize, out_planes: usize, oh: usize, ow: usize) -> u64 {
    [in_planes, kh, kw, out_planes, oh, ow].iter().map(|&v| v as u64).product()
}

/// `in_size · out_size`.
pub fn linear_ops(in_size: usize, out_size: usize) -> u64 {
    in_size as u64 * out_size as u64
}

/// Multiply-accumulate count of one conv/linear layer given its per-sample output shape.
pub fn layer_ops(kind: &LayerKind, out_shape: &[usize]) -> Result<u64, MetricsError> {
    match (kind, out_shape) {
        (
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            },
            [_, oh, ow],
        ) => Ok(conv_ops(*in_channels, *kernel_h, *kernel_w, *out_channels, *oh, *ow)),
        (
            LayerKind::Linear {
                in_features,
                out_features,
            },
            _,
        ) => Ok(linear_ops(*in_features, *out_features)),
        (LayerKind::Conv { .. }, _) => Err(MetricsError::UnsupportedLayer(format!(
            "conv with output shape {out_shape:?}"
        ))),
        (other, _) => Err(MetricsError::UnsupportedLayer(other.name().to_string())),
    }
}

/// `(layer index, ops)` for every conv/linear layer in order.
pub fn graph_layer_ops(graph: &ModelGraph) -> Result<Vec<(usize, u64)>, MetricsError> {
    let shapes = graph.layer_shapes()?;
    graph
        .weight_layers()
        .into_iter()
        .map(|i| Ok((i, layer_ops(&graph.layers[i].kind, &shapes[i])?)))
        .collect()
}

/// Effective operation count of the spiking network relative to its ANN.
///
/// `ops[j]` is the count of weight layer `j + 1` (1-based, `L = ops.len()`),
/// and `ifr` maps the 1-based index `i` of each hidden weight layer
/// (`2 ≤ i ≤ L - 1`) to the spiking rate feeding layer `i + 1`. The
/// numerator is `Σ ifr[i] · ops[i + 1]`; the denominator sums layers
/// `2..=L`, or every layer when `include_all` is set.
pub fn normalized_ops(ops: &[u64], ifr: &BTreeMap<usize, f64>, include_all: bool) -> Result<f64, MetricsError> {
    let l = ops.len();
    let mut numerator = 0.0;
    for i in 2..l {
        let rate = ifr.get(&i).ok_or(MetricsError::MissingIfr { layer: i })?;
        numerator += rate * ops[i] as f64;
    }
    let skip = if include_all { 0 } else { 1 };
    let denominator: u64 = ops.iter().skip(skip).sum();
    if denominator == 0 {
        return Ok(0.0);
    }
    Ok(numerator / denominator as f64)
}

/// Bits a rate code over `timesteps` steps can represent.
pub fn effective_bits(timesteps: usize) -> f64 {
    (timesteps as f64).log2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOps {
    pub layer: usize,
    pub kind: String,
    pub ops: u64,
    /// Spiking rate of this layer's input (spikes per input neuron per sample).
    pub ifr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsReport {
    pub layers: Vec<LayerOps>,
    pub normalized_ops: f64,
    pub include_all_layers: bool,
    pub timesteps: usize,
    pub mean_exit_timestep: f64,
    pub effective_bits: f64,
    pub samples: usize,
}

impl OpsReport {
    /// Builds the report from simulated input events. The spiking rate of
    /// hidden weight layer `i` is the number of spikes that reached layer
    /// `i + 1`, divided by that layer's input size and the sample count.
    pub fn from_inference(snn: &ModelGraph, result: &InferenceResult, include_all: bool) -> Result<Self, MetricsError> {
        let samples = result.samples.len();
        let events: Vec<u64> = result.weight_layers.iter().map(|w| w.events).collect();
        Self::from_events(snn, result, &events, samples, include_all)
    }

    /// Same as [`OpsReport::from_inference`] with the window cut at timestep `t`
    /// (needs an event trace from a full-window run).
    pub fn at_timestep(snn: &ModelGraph, result: &InferenceResult, t: usize, include_all: bool) -> Result<Self, MetricsError> {
        let trace = result.event_trace.as_ref().ok_or(MetricsError::MissingTrajectories)?;
        let mut events = vec![0u64; result.weight_layers.len()];
        for step in trace.iter().take(t) {
            events.iter_mut().zip(step).for_each(|(a, &b)| *a += b);
        }
        let mut report = Self::from_events(snn, result, &events, result.samples.len(), include_all)?;
        report.timesteps = t.min(result.timesteps);
        report.mean_exit_timestep = report.timesteps as f64;
        report.effective_bits = effective_bits(report.timesteps);
        Ok(report)
    }

    fn from_events(
        snn: &ModelGraph,
        result: &InferenceResult,
        events: &[u64],
        samples: usize,
        include_all: bool,
    ) -> Result<Self, MetricsError> {
        let layer_ops = graph_layer_ops(snn)?;
        if result.weight_layers.len() != layer_ops.len() {
            return Err(MetricsError::MissingIfr { layer: 1 });
        }
        let mut layers: Vec<LayerOps> = layer_ops
            .iter()
            .map(|&(layer, ops)| LayerOps {
                layer,
                kind: snn.layers[layer].kind.name().to_string(),
                ops,
                ifr: None,
            })
            .collect();
        let mut rates = BTreeMap::new();
        for (j, w) in result.weight_layers.iter().enumerate() {
            if w.spiking_input {
                let rate = events[j] as f64 / (w.inputs as f64 * samples.max(1) as f64);
                layers[j].ifr = Some(rate);
                // The input rate of 0-based weight layer j is the output rate of 1-based layer j.
                rates.insert(j, rate);
            }
        }
        let ops: Vec<u64> = layers.iter().map(|l| l.ops).collect();
        Ok(Self {
            normalized_ops: normalized_ops(&ops, &rates, include_all)?,
            layers,
            include_all_layers: include_all,
            timesteps: result.timesteps,
            mean_exit_timestep: result.mean_exit_timestep(),
            effective_bits: effective_bits(result.timesteps),
            samples,
        })
    }

    /// CSV columns: `layer,kind,ops,ifr,normalized_ops`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "kind", "ops", "ifr", "normalized_ops"])?;
        for l in &self.layers {
            w.write_record([
                l.layer.to_string(),
                l.kind.clone(),
                l.ops.to_string(),
                l.ifr.map(|v| v.to_string()).unwrap_or_default(),
                self.normalized_ops.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        let conv = LayerKind::Conv {
            in_channels: 3,
            out_channels: 64,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            pad: 1,
        };
        assert_eq!(layer_ops(&conv, &[64, 32, 32]).unwrap(), 1_769_472);
        let fc = LayerKind::Linear {
            in_features: 512,
            out_features: 100,
        };
        assert_eq!(layer_ops(&fc, &[100]).unwrap(), 51_200);
        assert!(layer_ops(&LayerKind::Relu, &[4]).is_err());
    }

    #[test]
    fn normalized_hand_example() {
        let ifr = BTreeMap::from([(2, 0.4), (3, 0.2)]);
        assert_eq!(normalized_ops(&[50, 100, 200, 100], &ifr, false).unwrap(), 0.25);
        let zero = BTreeMap::from([(2, 0.0), (3, 0.0)]);
        assert_eq!(normalized_ops(&[50, 100, 200, 100], &zero, false).unwrap(), 0.0);
        assert_eq!(normalized_ops(&[50, 100, 200, 100], &ifr, true).unwrap(), 100.0 / 450.0);
    }

    #[test]
    fn missing_rate_is_an_error() {
        let ifr = BTreeMap::from([(2, 0.4)]);
        assert!(matches!(
            normalized_ops(&[50, 100, 200, 100], &ifr, false),
            Err(MetricsError::MissingIfr { layer: 3 })
        ));
    }

    #[test]
    fn bits() {
        assert_eq!(effective_bits(128), 7.0);
        assert_eq!(effective_bits(1), 0.0);
    }
}
