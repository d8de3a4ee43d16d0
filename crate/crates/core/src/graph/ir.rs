use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::GraphError;
use crate::tensor::{conv_output_extent, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResetMode {
    /// Subtract the threshold from the membrane potential on a spike.
    #[serde(rename = "SIF")]
    Sif,
    /// Reset the membrane potential to zero on a spike.
    #[serde(rename = "RIF")]
    Rif,
}

impl fmt::Display for ResetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResetMode::Sif => "sif",
            ResetMode::Rif => "rif",
        })
    }
}

impl std::str::FromStr for ResetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sif" => Ok(ResetMode::Sif),
            "rif" => Ok(ResetMode::Rif),
            other => Err(format!("unknown reset mode '{other}' (expected sif or rif)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    #[serde(rename = "ReLU")]
    Relu,
    /// Integrate-and-fire neurons; `threshold` is filled in by conversion.
    #[serde(rename = "IF")]
    If {
        reset: ResetMode,
        threshold: Option<f32>,
    },
    AvgPool,
    MaxPool,
    Dropout {
        rate: f32,
    },
    Flatten,
    /// Thresholdless output neurons that integrate their input over time.
    Accumulator,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Relu => "relu",
            LayerKind::If { .. } => "if",
            LayerKind::AvgPool => "avgpool",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::Accumulator => "accumulator",
        }
    }

    pub fn has_weight(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Linear { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some(vec![out_channels, in_channels, kernel_h, kernel_w]),
            LayerKind::Linear {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub binarized: bool,
    #[serde(default)]
    pub is_first: bool,
    #[serde(default)]
    pub is_last: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            binarized: false,
            is_first: false,
            is_last: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "ANN")]
    Ann,
    #[serde(rename = "SNN")]
    Snn,
}

/// Placement of the pooling layer relative to the neuron layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchOption {
    AvgBefore,
    AvgAfter,
    MaxBefore,
    MaxAfter,
}

impl ArchOption {
    pub const ALL: [ArchOption; 4] = [
        ArchOption::AvgBefore,
        ArchOption::AvgAfter,
        ArchOption::MaxBefore,
        ArchOption::MaxAfter,
    ];

    pub fn uses_max(self) -> bool {
        matches!(self, ArchOption::MaxBefore | ArchOption::MaxAfter)
    }

    pub fn pool_before_neuron(self) -> bool {
        matches!(self, ArchOption::AvgBefore | ArchOption::MaxBefore)
    }
}

impl fmt::Display for ArchOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchOption::AvgBefore => "avg-before",
            ArchOption::AvgAfter => "avg-after",
            ArchOption::MaxBefore => "max-before",
            ArchOption::MaxAfter => "max-after",
        })
    }
}

impl std::str::FromStr for ArchOption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "avg-before" | "avgbefore" => Ok(ArchOption::AvgBefore),
            "avg-after" | "avgafter" => Ok(ArchOption::AvgAfter),
            "max-before" | "maxbefore" => Ok(ArchOption::MaxBefore),
            "max-after" | "maxafter" => Ok(ArchOption::MaxAfter),
            other => Err(format!(
                "unknown architecture '{other}' (expected avg-before, avg-after, max-before or max-after)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    /// Never produced by this crate; only representable so that foreign or
    /// tampered containers can be rejected by validation.
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub layer: usize,
    pub role: ParamRole,
}

impl ParamKey {
    pub fn weight(layer: usize) -> Self {
        Self {
            layer,
            role: ParamRole::Weight,
        }
    }
}

/// Sequential layer graph plus its parameters.
///
/// Parameter tensors are reference counted so that a converted spiking graph
/// shares its weights with the source network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub params: BTreeMap<ParamKey, Arc<Tensor>>,
    pub mode: Mode,
    pub arch: ArchOption,
    pub metadata: BTreeMap<String, String>,
}

pub const ACTIVATION_KEY: &str = "activation";
pub const SIGN_ACTIVATION: &str = "sign";

impl ModelGraph {
    pub fn weight(&self, layer: usize) -> Option<&Arc<Tensor>> {
        self.params.get(&ParamKey::weight(layer))
    }

    /// Indices of the conv/linear layers in order.
    pub fn weight_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.has_weight())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn if_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::If { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Marks every hidden conv/linear layer as binarized; first and last stay full precision.
    pub fn mark_binarized(&mut self) {
        for layer in &mut self.layers {
            if layer.kind.has_weight() && !layer.is_first && !layer.is_last {
                layer.binarized = true;
            }
        }
    }

    pub fn is_binarized(&self) -> bool {
        self.layers.iter().any(|l| l.binarized)
    }

    /// Networks trained in XNOR mode binarize activations with `sign` instead of ReLU.
    pub fn uses_sign_activation(&self) -> bool {
        self.metadata.get(ACTIVATION_KEY).map(String::as_str) == Some(SIGN_ACTIVATION)
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l.kind {
            LayerKind::Linear { out_features, .. } => Some(out_features),
            _ => None,
        })
    }

    /// Per-sample output shape of every layer, checking that the chain is consistent.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>, GraphError> {
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = next_shape(&shape, &layer.kind).map_err(|reason| GraphError::ShapeChain { layer: i, reason })?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    /// Input shape of layer `i` (per sample).
    pub fn layer_input_shape(&self, shapes: &[Vec<usize>], i: usize) -> Vec<usize> {
        if i == 0 {
            self.input_shape.clone()
        } else {
            shapes[i - 1].clone()
        }
    }
}

fn next_shape(shape: &[usize], kind: &LayerKind) -> Result<Vec<usize>, String> {
    match *kind {
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
        } => {
            let [c, h, w] = shape else {
                return Err(format!("conv expects [C,H,W] input, got {shape:?}"));
            };
            if *c != in_channels {
                return Err(format!("conv expects {in_channels} input planes, got {c}"));
            }
            let oh = conv_output_extent(*h, kernel_h, stride, pad).map_err(|e| e.to_string())?;
            let ow = conv_output_extent(*w, kernel_w, stride, pad).map_err(|e| e.to_string())?;
            Ok(vec![out_channels, oh, ow])
        }
        LayerKind::Linear {
            in_features,
            out_features,
        } => match shape {
            [n] if *n == in_features => Ok(vec![out_features]),
            _ => Err(format!("linear expects [{in_features}] input, got {shape:?}")),
        },
        LayerKind::AvgPool | LayerKind::MaxPool => match shape {
            [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![*c, h / 2, w / 2]),
            _ => Err(format!("2x2 pooling needs even [C,H,W] input, got {shape:?}")),
        },
        LayerKind::Flatten => Ok(vec![shape.iter().product()]),
        LayerKind::Relu | LayerKind::If { .. } | LayerKind::Dropout { .. } | LayerKind::Accumulator => {
            Ok(shape.to_vec())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BiasPresent { layer: usize },
    FirstLayerCount(usize),
    LastLayerCount(usize),
    FlagOnNonWeightLayer { layer: usize },
    FirstOrLastBinarized { layer: usize },
    BinarizedNonWeightLayer { layer: usize },
    IfInAnnGraph { layer: usize },
    AccumulatorInAnnGraph { layer: usize },
    ReluInSnnGraph { layer: usize },
    MissingThreshold { layer: usize },
    NonPositiveThreshold { layer: usize, value: f32 },
    MissingAccumulator,
    MissingWeight { layer: usize },
    WeightShape { layer: usize, expected: Vec<usize>, got: Vec<usize> },
    NonFiniteWeight { layer: usize },
    OrphanParameter { layer: usize },
    InvalidDropoutRate { layer: usize, rate: f32 },
    ShapeChain(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BiasPresent { layer } => write!(f, "bias present on layer {layer}"),
            Violation::FirstLayerCount(n) => write!(f, "expected exactly one first layer, found {n}"),
            Violation::LastLayerCount(n) => write!(f, "expected exactly one last layer, found {n}"),
            Violation::FlagOnNonWeightLayer { layer } => {
                write!(f, "first/last flag on non-weight layer {layer}")
            }
            Violation::FirstOrLastBinarized { layer } => {
                write!(f, "first or last layer {layer} must stay full precision")
            }
            Violation::BinarizedNonWeightLayer { layer } => {
                write!(f, "binarized flag on non-weight layer {layer}")
            }
            Violation::IfInAnnGraph { layer } => write!(f, "IF layer {layer} in an ANN-mode graph"),
            Violation::AccumulatorInAnnGraph { layer } => {
                write!(f, "accumulator layer {layer} in an ANN-mode graph")
            }
            Violation::ReluInSnnGraph { layer } => write!(f, "ReLU layer {layer} in an SNN-mode graph"),
            Violation::MissingThreshold { layer } => write!(f, "IF layer {layer} has no threshold"),
            Violation::NonPositiveThreshold { layer, value } => {
                write!(f, "IF layer {layer} has non-positive threshold {value}")
            }
            Violation::MissingAccumulator => write!(f, "SNN graph must end with an accumulator"),
            Violation::MissingWeight { layer } => write!(f, "layer {layer} has no weight tensor"),
            Violation::WeightShape { layer, expected, got } => {
                write!(f, "layer {layer} weight shape {got:?}, expected {expected:?}")
            }
            Violation::NonFiniteWeight { layer } => write!(f, "layer {layer} has non-finite weights"),
            Violation::OrphanParameter { layer } => write!(f, "parameter attached to non-weight layer {layer}"),
            Violation::InvalidDropoutRate { layer, rate } => {
                write!(f, "dropout layer {layer} rate {rate} outside [0, 1)")
            }
            Violation::ShapeChain(msg) => write!(f, "{msg}"),
        }
    }
}

/// Checks every structural invariant of a graph, collecting all violations.
pub fn validate(graph: &ModelGraph) -> Result<(), Vec<Violation>> {
    let mut errs = Vec::new();
    let snn = graph.mode == Mode::Snn;

    let firsts = graph.layers.iter().filter(|l| l.is_first).count();
    let lasts = graph.layers.iter().filter(|l| l.is_last).count();
    if firsts != 1 {
        errs.push(Violation::FirstLayerCount(firsts));
    }
    if lasts != 1 {
        errs.push(Violation::LastLayerCount(lasts));
    }

    for (i, layer) in graph.layers.iter().enumerate() {
        let weighted = layer.kind.has_weight();
        if (layer.is_first || layer.is_last) && !weighted {
            errs.push(Violation::FlagOnNonWeightLayer { layer: i });
        }
        if layer.binarized && !weighted {
            errs.push(Violation::BinarizedNonWeightLayer { layer: i });
        }
        if layer.binarized && (layer.is_first || layer.is_last) {
            errs.push(Violation::FirstOrLastBinarized { layer: i });
        }
        match layer.kind {
            LayerKind::If { threshold, .. } => {
                if !snn {
                    errs.push(Violation::IfInAnnGraph { layer: i });
                } else {
                    match threshold {
                        None => errs.push(Violation::MissingThreshold { layer: i }),
                        Some(v) if !(v > 0.0 && v.is_finite()) => {
                            errs.push(Violation::NonPositiveThreshold { layer: i, value: v })
                        }
                        _ => {}
                    }
                }
            }
            LayerKind::Accumulator if !snn => errs.push(Violation::AccumulatorInAnnGraph { layer: i }),
            LayerKind::Relu if snn => errs.push(Violation::ReluInSnnGraph { layer: i }),
            LayerKind::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                errs.push(Violation::InvalidDropoutRate { layer: i, rate })
            }
            _ => {}
        }
        if let Some(expected) = layer.kind.weight_shape() {
            match graph.weight(i) {
                None => errs.push(Violation::MissingWeight { layer: i }),
                Some(w) if w.shape() != expected.as_slice() => errs.push(Violation::WeightShape {
                    layer: i,
                    expected,
                    got: w.shape().to_vec(),
                }),
                Some(w) if !w.is_finite() => errs.push(Violation::NonFiniteWeight { layer: i }),
                _ => {}
            }
        }
    }

    if snn && !matches!(graph.layers.last().map(|l| &l.kind), Some(LayerKind::Accumulator)) {
        errs.push(Violation::MissingAccumulator);
    }

    for key in graph.params.keys() {
        match key.role {
            ParamRole::Bias => errs.push(Violation::BiasPresent { layer: key.layer }),
            ParamRole::Weight => {
                if !graph.layers.get(key.layer).is_some_and(|l| l.kind.has_weight()) {
                    errs.push(Violation::OrphanParameter { layer: key.layer });
                }
            }
        }
    }
    if let Err(e) = graph.layer_shapes() {
        errs.push(Violation::ShapeChain(e.to_string()));
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}
