use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ir::{ArchOption, LayerKind, LayerSpec, Mode, ModelGraph, ParamKey};
use super::GraphError;
use crate::tensor::Tensor;

/// Widths and depth of a VGG-style network.
///
/// Each entry of `stages` lists the output channels of the 3×3 convolutions
/// in one stage; every stage ends in a 2×2 pooling layer. `hidden` lists the
/// widths of the hidden linear layers before the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthConfig {
    pub input_shape: Vec<usize>,
    pub stages: Vec<Vec<usize>>,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub dropout: f32,
    pub init_seed: u64,
}

impl DepthConfig {
    /// VGG-16 with one linear layer removed: 13 conv and 2 linear layers.
    pub fn vgg15(input_shape: Vec<usize>, classes: usize) -> Self {
        Self {
            input_shape,
            stages: vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
            hidden: vec![4096],
            classes,
            dropout: 0.2,
            init_seed: 0,
        }
    }

    /// Five weight layers on 16×16 single-channel images.
    pub fn tiny(classes: usize) -> Self {
        Self {
            input_shape: vec![1, 16, 16],
            stages: vec![vec![8], vec![16, 16]],
            hidden: vec![64],
            classes,
            dropout: 0.1,
            init_seed: 0,
        }
    }
}

/// Builds an ANN-mode graph for one of the four pooling placements.
///
/// Stage layout per conv: `Conv → ReLU → Dropout`, except the last conv of a
/// stage, which becomes `Conv → Pool → ReLU → Dropout` for the "before"
/// options and `Conv → ReLU → Pool` for the "after" options. Weights are
/// Kaiming-normal initialised from `init_seed`.
pub fn build_network(arch: ArchOption, cfg: &DepthConfig) -> Result<ModelGraph, GraphError> {
    if cfg.input_shape.len() != 3 || cfg.classes < 2 || cfg.stages.iter().any(|s| s.is_empty()) {
        return Err(GraphError::InvalidConfig(format!(
            "need a [C,H,W] input, at least 2 classes and non-empty stages, got {cfg:?}"
        )));
    }
    let pool = if arch.uses_max() {
        LayerKind::MaxPool
    } else {
        LayerKind::AvgPool
    };
    let dropout = LayerSpec::new(LayerKind::Dropout { rate: cfg.dropout });
    let relu = LayerSpec::new(LayerKind::Relu);

    let mut layers = Vec::new();
    let mut channels = cfg.input_shape[0];
    for stage in &cfg.stages {
        for (j, &width) in stage.iter().enumerate() {
            layers.push(LayerSpec::new(LayerKind::Conv {
                in_channels: channels,
                out_channels: width,
                kernel_h: 3,
                kernel_w: 3,
                stride: 1,
                pad: 1,
            }));
            channels = width;
            let stage_end = j + 1 == stage.len();
            if !stage_end {
                layers.extend([relu.clone(), dropout.clone()]);
            } else if arch.pool_before_neuron() {
                layers.extend([LayerSpec::new(pool.clone()), relu.clone(), dropout.clone()]);
            } else {
                layers.extend([relu.clone(), LayerSpec::new(pool.clone())]);
            }
        }
    }
    layers.push(LayerSpec::new(LayerKind::Flatten));

    let mut graph = ModelGraph {
        input_shape: cfg.input_shape.clone(),
        layers,
        params: BTreeMap::new(),
        mode: Mode::Ann,
        arch,
        metadata: BTreeMap::new(),
    };
    let mut features: usize = graph.layer_shapes()?.last().map(|s| s.iter().product()).unwrap_or(0);
    for &width in &cfg.hidden {
        graph.layers.push(LayerSpec::new(LayerKind::Linear {
            in_features: features,
            out_features: width,
        }));
        graph.layers.extend([relu.clone(), dropout.clone()]);
        features = width;
    }
    graph.layers.push(LayerSpec::new(LayerKind::Linear {
        in_features: features,
        out_features: cfg.classes,
    }));

    let weighted = graph.weight_layers();
    graph.layers[weighted[0]].is_first = true;
    graph.layers[*weighted.last().unwrap()].is_last = true;
    graph.layer_shapes()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    for i in weighted {
        let shape = graph.layers[i].kind.weight_shape().unwrap();
        let fan_in: usize = shape[1..].iter().product();
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("valid std");
        let w = Tensor::from_fn(&shape, |_| normal.sample(&mut rng))?;
        graph.params.insert(ParamKey::weight(i), Arc::new(w));
    }
    graph.metadata.insert("init_seed".into(), cfg.init_seed.to_string());
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate;

    fn kinds(g: &ModelGraph) -> Vec<&'static str> {
        g.layers.iter().map(|l| l.kind.name()).collect()
    }

    #[test]
    fn every_option_validates() {
        for arch in ArchOption::ALL {
            let g = build_network(arch, &DepthConfig::tiny(4)).unwrap();
            assert_eq!(validate(&g), Ok(()), "{arch}");
        }
    }

    #[test]
    fn avg_before_orders_pool_then_relu() {
        let g = build_network(ArchOption::AvgBefore, &DepthConfig::tiny(4)).unwrap();
        assert_eq!(&kinds(&g)[..5], &["conv", "avgpool", "relu", "dropout", "conv"]);
    }

    #[test]
    fn max_after_orders_relu_then_pool() {
        let g = build_network(ArchOption::MaxAfter, &DepthConfig::tiny(4)).unwrap();
        assert_eq!(&kinds(&g)[..4], &["conv", "relu", "maxpool", "conv"]);
    }

    #[test]
    fn dropout_follows_relus_not_followed_by_pooling() {
        for arch in ArchOption::ALL {
            let g = build_network(arch, &DepthConfig::tiny(4)).unwrap();
            let k = kinds(&g);
            for i in 0..k.len() {
                if k[i] == "relu" {
                    let next = k.get(i + 1).copied();
                    let pooled = matches!(next, Some("avgpool") | Some("maxpool"));
                    assert_eq!(next == Some("dropout"), !pooled, "{arch} at {i}");
                }
            }
        }
    }

    #[test]
    fn vgg15_has_thirteen_convs_and_two_linears() {
        let cfg = DepthConfig::vgg15(vec![3, 32, 32], 100);
        let g = build_network(ArchOption::AvgBefore, &cfg).unwrap();
        let convs = g.layers.iter().filter(|l| matches!(l.kind, LayerKind::Conv { .. })).count();
        let linears = g.layers.iter().filter(|l| matches!(l.kind, LayerKind::Linear { .. })).count();
        assert_eq!((convs, linears), (13, 2));
        assert_eq!(validate(&g), Ok(()));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_network(ArchOption::AvgBefore, &DepthConfig::tiny(4)).unwrap();
        let b = build_network(ArchOption::AvgBefore, &DepthConfig::tiny(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_odd_pooling_chain() {
        let mut cfg = DepthConfig::tiny(4);
        cfg.input_shape = vec![1, 6, 6];
        assert!(build_network(ArchOption::AvgBefore, &cfg).is_err());
    }
}
