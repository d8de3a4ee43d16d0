//! Real-valued execution of ANN-mode graphs, with a tape for backprop.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::binarize::{binarize_activations_sign, effective_weights, sign_activation_backward, ste_weight_grad};
use super::TrainError;
use crate::graph::{LayerKind, Mode, ModelGraph};
use crate::tensor::{self, DropoutKey, Tensor};

/// Training-mode settings: dropout is active and keyed per sample.
#[derive(Debug, Clone)]
pub struct TrainContext {
    pub dropout_seed: u64,
    pub sample_ids: Vec<u64>,
}

/// Everything the backward pass needs from a forward pass.
pub struct Tape {
    inputs: Vec<Tensor>,
    masks: Vec<Option<Tensor>>,
    weights: Vec<Option<Arc<Tensor>>>,
}

/// Weight actually used in the forward pass: `alpha · sign(W)` for binarized layers.
pub fn forward_weight(graph: &ModelGraph, layer: usize) -> Result<Arc<Tensor>, TrainError> {
    let w = graph.weight(layer).ok_or(TrainError::MissingWeight(layer))?;
    Ok(if graph.layers[layer].binarized {
        Arc::new(effective_weights(w))
    } else {
        Arc::clone(w)
    })
}

fn batch_shape(batch: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per_sample.len() + 1);
    s.push(batch);
    s.extend_from_slice(per_sample);
    s
}

fn run(
    graph: &ModelGraph,
    input: &Tensor,
    train: Option<&TrainContext>,
    mut tape: Option<&mut Tape>,
    mut observe: impl FnMut(usize, &Tensor),
) -> Result<Tensor, TrainError> {
    if graph.mode != Mode::Ann {
        return Err(TrainError::WrongMode);
    }
    let expected = batch_shape(input.shape()[0], &graph.input_shape);
    if input.shape() != expected.as_slice() {
        return Err(TrainError::InputShape {
            expected: graph.input_shape.clone(),
            got: input.shape()[1..].to_vec(),
        });
    }
    let sign = graph.uses_sign_activation();
    let batch = input.shape()[0];
    let mut x = input.clone();
    for (i, layer) in graph.layers.iter().enumerate() {
        let mut mask = None;
        let mut weight = None;
        let y = match layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let w = forward_weight(graph, i)?;
                let y = tensor::conv2d(&x, &w, stride, pad)?;
                weight = Some(w);
                y
            }
            LayerKind::Linear { .. } => {
                let w = forward_weight(graph, i)?;
                let y = tensor::linear(&x, &w)?;
                weight = Some(w);
                y
            }
            LayerKind::Relu if sign => binarize_activations_sign(&x),
            LayerKind::Relu => tensor::relu(&x),
            LayerKind::AvgPool => tensor::avgpool2x2(&x)?,
            LayerKind::MaxPool => tensor::maxpool2x2(&x)?,
            LayerKind::Dropout { rate } => match train {
                Some(ctx) if rate > 0.0 => {
                    let key = DropoutKey {
                        seed: ctx.dropout_seed,
                        layer: i as u64,
                    };
                    let (y, m) = tensor::dropout(&x, rate as f64, key, &ctx.sample_ids)?;
                    mask = Some(m);
                    y
                }
                _ => x.clone(),
            },
            LayerKind::Flatten => x.clone().reshape(vec![batch, x.sample_len()])?,
            LayerKind::If { .. } | LayerKind::Accumulator => return Err(TrainError::WrongMode),
        };
        observe(i, &y);
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.push(std::mem::replace(&mut x, y));
            t.masks.push(mask);
            t.weights.push(weight);
        } else {
            x = y;
        }
    }
    Ok(x)
}

/// Inference-mode forward pass (dropout inert).
pub fn forward_eval(graph: &ModelGraph, input: &Tensor) -> Result<Tensor, TrainError> {
    run(graph, input, None, None, |_, _| {})
}

/// Inference-mode forward pass that reports every layer's output.
pub fn forward_observe(
    graph: &ModelGraph,
    input: &Tensor,
    observe: impl FnMut(usize, &Tensor),
) -> Result<Tensor, TrainError> {
    run(graph, input, None, None, observe)
}

/// Training-mode forward pass recording a tape.
pub fn forward_train(graph: &ModelGraph, input: &Tensor, ctx: &TrainContext) -> Result<(Tensor, Tape), TrainError> {
    let mut tape = Tape {
        inputs: Vec::with_capacity(graph.layers.len()),
        masks: Vec::with_capacity(graph.layers.len()),
        weights: Vec::with_capacity(graph.layers.len()),
    };
    let out = run(graph, input, Some(ctx), Some(&mut tape), |_, _| {})?;
    Ok((out, tape))
}

/// Backpropagates `grad_out` and returns gradients w.r.t. the stored
/// (full-precision proxy) weights, keyed by layer index.
pub fn backward(graph: &ModelGraph, tape: &Tape, grad_out: &Tensor) -> Result<BTreeMap<usize, Tensor>, TrainError> {
    let sign = graph.uses_sign_activation();
    let mut grads = BTreeMap::new();
    let mut g = grad_out.clone();
    for (i, layer) in graph.layers.iter().enumerate().rev() {
        let x = &tape.inputs[i];
        g = match layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let w = tape.weights[i].as_ref().expect("taped weight");
                let (gi, gw) = tensor::conv2d_backward(&g, x, w, stride, pad)?;
                grads.insert(i, gw);
                gi
            }
            LayerKind::Linear { .. } => {
                let w = tape.weights[i].as_ref().expect("taped weight");
                let (gi, gw) = tensor::linear_backward(&g, x, w)?;
                grads.insert(i, gw);
                gi
            }
            LayerKind::Relu if sign => sign_activation_backward(&g, x)?,
            LayerKind::Relu => tensor::relu_backward(&g, x)?,
            LayerKind::AvgPool => tensor::avgpool2x2_backward(&g, x.shape())?,
            LayerKind::MaxPool => tensor::maxpool2x2_backward(&g, x)?,
            LayerKind::Dropout { .. } => match &tape.masks[i] {
                Some(m) => tensor::dropout_backward(&g, m)?,
                None => g,
            },
            LayerKind::Flatten => g.reshape(x.shape().to_vec())?,
            LayerKind::If { .. } | LayerKind::Accumulator => return Err(TrainError::WrongMode),
        };
    }
    for (i, gw) in grads.iter_mut() {
        if graph.layers[*i].binarized {
            let proxy = graph.weight(*i).ok_or(TrainError::MissingWeight(*i))?;
            *gw = ste_weight_grad(gw, proxy)?;
        }
    }
    Ok(grads)
}
