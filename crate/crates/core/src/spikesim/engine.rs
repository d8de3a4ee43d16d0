use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::neuron::{signed_popcount, NeuronState, SimState, SpikeVector};
use super::SimError;
use crate::graph::{validate, LayerKind, Mode, ModelGraph, ResetMode, Violation};
use crate::tensor::{self, argmax, Tensor};
use crate::train::{binarize_weights, forward_weight, words_for, BinarizedWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Inference window N.
    pub timesteps: usize,
    /// Early-exit confidence threshold on the largest output potential.
    /// `Some(f32::INFINITY)` never triggers.
    pub theta: Option<f32>,
    pub record_ifr: bool,
    /// Keep per-timestep spike and input-event totals for every layer.
    pub record_trace: bool,
    /// Keep every sample's per-timestep prediction and largest output potential.
    pub record_trajectory: bool,
    /// Samples simulated per parallel work unit.
    pub batch_size: usize,
    /// Recorded for provenance; the simulation itself draws no random numbers.
    pub seed: u64,
}

impl SimConfig {
    pub fn new(timesteps: usize) -> Self {
        Self {
            timesteps,
            theta: None,
            record_ifr: true,
            record_trace: false,
            record_trajectory: false,
            batch_size: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.timesteps == 0 {
            return Err(SimError::InvalidConfig("timesteps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SimError::InvalidConfig("batch size must be positive".into()));
        }
        if let Some(t) = self.theta {
            if !(t > 0.0) {
                return Err(SimError::InvalidConfig(format!("confidence threshold {t} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub prediction: usize,
    pub exit_timestep: usize,
    /// Output accumulator potentials at exit.
    pub potentials: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub prediction: u32,
    pub max_potential: f32,
}

/// Spike total of one IF layer over all samples and their windows.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivity {
    pub layer: usize,
    pub neurons: usize,
    pub spikes: u64,
}

/// Input events seen by one conv/linear layer. For spiking inputs an event
/// is one incoming spike; the analog-driven first layer counts every input
/// on every timestep it was evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightActivity {
    pub layer: usize,
    pub inputs: usize,
    pub events: u64,
    pub spiking_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub timesteps: usize,
    pub samples: Vec<SampleResult>,
    pub if_layers: Vec<LayerActivity>,
    pub weight_layers: Vec<WeightActivity>,
    /// `trace[t][k]`: spikes of the k-th IF layer at timestep `t + 1`.
    pub trace: Option<Vec<Vec<u64>>>,
    /// `event_trace[t][k]`: input events of the k-th conv/linear layer at timestep `t + 1`.
    pub event_trace: Option<Vec<Vec<u64>>>,
    pub trajectories: Option<Vec<Vec<StepRecord>>>,
}

impl InferenceResult {
    pub fn predictions(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.prediction).collect()
    }

    pub fn accuracy(&self, labels: &[u32]) -> f64 {
        let hits = self
            .samples
            .iter()
            .zip(labels)
            .filter(|(s, &l)| s.prediction == l as usize)
            .count();
        hits as f64 / self.samples.len().max(1) as f64
    }

    pub fn mean_exit_timestep(&self) -> f64 {
        self.samples.iter().map(|s| s.exit_timestep as f64).sum::<f64>() / self.samples.len().max(1) as f64
    }

    /// IF spiking rate per layer: spikes per neuron per sample over the window.
    pub fn if_rates(&self) -> Vec<f64> {
        let n = self.samples.len().max(1) as f64;
        self.if_layers.iter().map(|l| l.spikes as f64 / (l.neurons as f64 * n)).collect()
    }

    pub fn total_spikes(&self) -> u64 {
        self.if_layers.iter().map(|l| l.spikes).sum()
    }

    /// Prediction of every sample had the window been cut at `t` (needs trajectories).
    pub fn predictions_at(&self, t: usize) -> Option<Vec<usize>> {
        let traj = self.trajectories.as_ref()?;
        Some(
            traj.iter()
                .map(|steps| {
                    let i = t.clamp(1, steps.len()) - 1;
                    steps[i].prediction as usize
                })
                .collect(),
        )
    }
}

enum Signal {
    Current(Vec<f32>),
    Spikes { bits: SpikeVector, amplitude: f32 },
}

impl Signal {
    fn into_current(self) -> Vec<f32> {
        match self {
            Signal::Current(c) => c,
            Signal::Spikes { bits, amplitude } => (0..bits.len())
                .map(|i| if bits.get(i) { amplitude } else { 0.0 })
                .collect(),
        }
    }
}

const NO_TAP: u32 = u32::MAX;

struct WeightOp {
    slot: usize,
    binary: Option<BinarizedWeights>,
    /// Effective weights transposed to `[row_len][out_features]`.
    dense_t: Vec<f32>,
    out_features: usize,
    row_len: usize,
    positions: usize,
    /// Conv only: input index of every receptive-field tap, `NO_TAP` for padding.
    taps: Option<Vec<u32>>,
}

enum Op {
    Neuron { slot: usize, neurons: usize },
    Weight(WeightOp),
    AvgPool { c: usize, h: usize, w: usize },
    MaxPool { c: usize, h: usize, w: usize },
    Accumulate,
    Identity,
}

/// A spiking graph compiled for repeated simulation.
pub struct Simulator {
    graph: ModelGraph,
    prefix_end: usize,
    ops: Vec<Op>,
    neurons: Vec<(usize, usize, ResetMode, f32)>,
    weights: Vec<(usize, usize, bool)>,
    classes: usize,
}

fn conv_taps(in_shape: &[usize], kh: usize, kw: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Vec<u32> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let row_len = c * kh * kw;
    let mut taps = vec![NO_TAP; oh * ow * row_len];
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * row_len;
            for ci in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        let x = (ox * stride + kx) as isize - pad as isize;
                        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                            taps[base + (ci * kh + ky) * kw + kx] = ((ci * h + y as usize) * w + x as usize) as u32;
                        }
                    }
                }
            }
        }
    }
    taps
}

fn weight_of(graph: &ModelGraph, layer: usize) -> Result<Arc<Tensor>, SimError> {
    forward_weight(graph, layer).map_err(|_| SimError::Invalid(vec![Violation::MissingWeight { layer }]))
}

fn transpose(w: &Tensor, rows: usize, row_len: usize) -> Vec<f32> {
    let mut t = vec![0.0; rows * row_len];
    for (f, row) in w.data().chunks(row_len).enumerate() {
        for (k, &v) in row.iter().enumerate() {
            t[k * rows + f] = v;
        }
    }
    t
}

impl Simulator {
    pub fn new(graph: &ModelGraph) -> Result<Self, SimError> {
        if graph.mode != Mode::Snn {
            return Err(SimError::NotSpiking);
        }
        validate(graph).map_err(SimError::Invalid)?;
        let shapes = graph.layer_shapes()?;
        let prefix_end = graph
            .layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::If { .. } | LayerKind::Accumulator))
            .expect("validated SNN ends with an accumulator");

        let mut weights = Vec::new();
        for (i, layer) in graph.layers.iter().enumerate().take(prefix_end) {
            if layer.kind.has_weight() {
                let inputs = graph.layer_input_shape(&shapes, i).iter().product();
                weights.push((i, inputs, false));
            }
        }

        let mut ops = Vec::new();
        let mut neurons = Vec::new();
        for (i, layer) in graph.layers.iter().enumerate().skip(prefix_end) {
            let in_shape = graph.layer_input_shape(&shapes, i);
            let op = match layer.kind {
                LayerKind::If { reset, threshold } => {
                    let n = shapes[i].iter().product();
                    neurons.push((i, n, reset, threshold.expect("validated threshold")));
                    Op::Neuron {
                        slot: neurons.len() - 1,
                        neurons: n,
                    }
                }
                LayerKind::Conv { .. } | LayerKind::Linear { .. } => {
                    let w = weight_of(graph, i)?;
                    let out_features = w.shape()[0];
                    let row_len = w.sample_len();
                    let (positions, taps) = match layer.kind {
                        LayerKind::Conv {
                            kernel_h,
                            kernel_w,
                            stride,
                            pad,
                            ..
                        } => {
                            let (oh, ow) = (shapes[i][1], shapes[i][2]);
                            let taps = conv_taps(&in_shape, kernel_h, kernel_w, stride, pad, oh, ow);
                            (oh * ow, Some(taps))
                        }
                        _ => (1, None),
                    };
                    let binary = layer.binarized.then(|| binarize_weights(graph.weight(i).expect("validated weight")));
                    weights.push((i, in_shape.iter().product(), true));
                    Op::Weight(WeightOp {
                        slot: weights.len() - 1,
                        binary,
                        dense_t: transpose(&w, out_features, row_len),
                        out_features,
                        row_len,
                        positions,
                        taps,
                    })
                }
                LayerKind::AvgPool => Op::AvgPool {
                    c: in_shape[0],
                    h: in_shape[1],
                    w: in_shape[2],
                },
                LayerKind::MaxPool => Op::MaxPool {
                    c: in_shape[0],
                    h: in_shape[1],
                    w: in_shape[2],
                },
                LayerKind::Accumulator => Op::Accumulate,
                LayerKind::Dropout { .. } | LayerKind::Flatten => Op::Identity,
                LayerKind::Relu => return Err(SimError::NotSpiking),
            };
            ops.push(op);
        }
        let classes = shapes.last().map(|s| s.iter().product()).unwrap_or(0);
        Ok(Self {
            graph: graph.clone(),
            prefix_end,
            ops,
            neurons,
            weights,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Zeroed potentials for every IF layer and the accumulator.
    pub fn fresh_state(&self) -> SimState {
        SimState {
            neurons: self
                .neurons
                .iter()
                .map(|&(_, n, reset, v_th)| NeuronState::new(n, reset, v_th))
                .collect(),
            accumulator: vec![0.0; self.classes],
        }
    }

    /// Output of the layers before the first IF layer, computed once per image.
    fn constant_current(&self, image: &[f32]) -> Result<Vec<f32>, SimError> {
        let mut shape = vec![1];
        shape.extend_from_slice(&self.graph.input_shape);
        let mut x = Tensor::new(shape, image.to_vec())?;
        for (i, layer) in self.graph.layers.iter().enumerate().take(self.prefix_end) {
            x = match layer.kind {
                LayerKind::Conv { stride, pad, .. } => {
                    let w = weight_of(&self.graph, i)?;
                    tensor::conv2d(&x, &w, stride, pad)?
                }
                LayerKind::Linear { .. } => {
                    let w = weight_of(&self.graph, i)?;
                    tensor::linear(&x, &w)?
                }
                LayerKind::AvgPool => tensor::avgpool2x2(&x)?,
                LayerKind::MaxPool => tensor::maxpool2x2(&x)?,
                LayerKind::Flatten => {
                    let n = x.len();
                    x.reshape(vec![1, n])?
                }
                LayerKind::Dropout { .. } => x,
                LayerKind::Relu | LayerKind::If { .. } | LayerKind::Accumulator => unreachable!("not in prefix"),
            };
        }
        Ok(x.into_data())
    }

    fn weight_forward(op: &WeightOp, sig: Signal, events: &mut [u64]) -> Vec<f32> {
        let f_out = op.out_features;
        let mut out = vec![0.0f32; f_out * op.positions];
        match sig {
            Signal::Spikes { bits, amplitude } => {
                events[op.slot] += bits.count_ones();
                if !bits.any() {
                    return out;
                }
                match &op.taps {
                    None => match &op.binary {
                        Some(b) => {
                            for (f, o) in out.iter_mut().enumerate() {
                                let row = b.row(f);
                                *o = amplitude * (row.alpha * signed_popcount(bits.words(), row.words) as f32);
                            }
                        }
                        None => {
                            for k in bits.ones() {
                                let col = &op.dense_t[k * f_out..(k + 1) * f_out];
                                out.iter_mut().zip(col).for_each(|(o, &w)| *o += w);
                            }
                            out.iter_mut().for_each(|o| *o *= amplitude);
                        }
                    },
                    Some(taps) => {
                        let p_count = op.positions;
                        let mut field = vec![0u64; words_for(op.row_len)];
                        let mut acc = vec![0.0f32; f_out];
                        for p in 0..p_count {
                            field.fill(0);
                            let mut any = false;
                            for (k, &idx) in taps[p * op.row_len..(p + 1) * op.row_len].iter().enumerate() {
                                if idx != NO_TAP && bits.get(idx as usize) {
                                    field[k / 64] |= 1 << (k % 64);
                                    any = true;
                                }
                            }
                            if !any {
                                continue;
                            }
                            match &op.binary {
                                Some(b) => {
                                    for f in 0..f_out {
                                        let row = b.row(f);
                                        out[f * p_count + p] =
                                            amplitude * (row.alpha * signed_popcount(&field, row.words) as f32);
                                    }
                                }
                                None => {
                                    acc.fill(0.0);
                                    for (wi, &word) in field.iter().enumerate() {
                                        let mut rest = word;
                                        while rest != 0 {
                                            let k = wi * 64 + rest.trailing_zeros() as usize;
                                            rest &= rest - 1;
                                            let col = &op.dense_t[k * f_out..(k + 1) * f_out];
                                            acc.iter_mut().zip(col).for_each(|(a, &w)| *a += w);
                                        }
                                    }
                                    for (f, &a) in acc.iter().enumerate() {
                                        out[f * p_count + p] = amplitude * a;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Signal::Current(x) => {
                events[op.slot] += x.iter().filter(|&&v| v != 0.0).count() as u64;
                let p_count = op.positions;
                for p in 0..p_count {
                    for k in 0..op.row_len {
                        let v = match &op.taps {
                            None => x[k],
                            Some(taps) => match taps[p * op.row_len + k] {
                                NO_TAP => continue,
                                idx => x[idx as usize],
                            },
                        };
                        if v == 0.0 {
                            continue;
                        }
                        let col = &op.dense_t[k * f_out..(k + 1) * f_out];
                        for (f, &w) in col.iter().enumerate() {
                            out[f * p_count + p] += v * w;
                        }
                    }
                }
            }
        }
        out
    }

    fn pool(sig: Signal, c: usize, h: usize, w: usize, max: bool) -> Signal {
        let (oh, ow) = (h / 2, w / 2);
        let block = |ch: usize, y: usize, x: usize| {
            [
                (ch * h + 2 * y) * w + 2 * x,
                (ch * h + 2 * y) * w + 2 * x + 1,
                (ch * h + 2 * y + 1) * w + 2 * x,
                (ch * h + 2 * y + 1) * w + 2 * x + 1,
            ]
        };
        let cells = (0..c).flat_map(|ch| (0..oh).flat_map(move |y| (0..ow).map(move |x| (ch, y, x))));
        match sig {
            Signal::Spikes { bits, amplitude } if max => {
                let mut out = SpikeVector::new(c * oh * ow);
                for (o, (ch, y, x)) in cells.enumerate() {
                    if block(ch, y, x).iter().any(|&i| bits.get(i)) {
                        out.set(o);
                    }
                }
                Signal::Spikes { bits: out, amplitude }
            }
            Signal::Spikes { bits, amplitude } => Signal::Current(
                cells
                    .map(|(ch, y, x)| {
                        let n = block(ch, y, x).iter().filter(|&&i| bits.get(i)).count();
                        amplitude * n as f32 / 4.0
                    })
                    .collect(),
            ),
            Signal::Current(v) => Signal::Current(
                cells
                    .map(|(ch, y, x)| {
                        let b = block(ch, y, x).map(|i| v[i]);
                        if max {
                            b.into_iter().fold(f32::NEG_INFINITY, f32::max)
                        } else {
                            (b[0] + b[1] + b[2] + b[3]) * 0.25
                        }
                    })
                    .collect(),
            ),
        }
    }

    /// Simulates one image from a fresh state.
    fn simulate(&self, image: &[f32], cfg: &SimConfig) -> Result<SampleRun, SimError> {
        let constant = self.constant_current(image)?;
        let mut state = self.fresh_state();
        let mut run = SampleRun {
            result: SampleResult {
                prediction: 0,
                exit_timestep: cfg.timesteps,
                potentials: Vec::new(),
            },
            spikes: vec![0; self.neurons.len()],
            events: vec![0; self.weights.len()],
            trace: Vec::new(),
            event_trace: Vec::new(),
            trajectory: Vec::new(),
        };
        let mut events_before = vec![0u64; self.weights.len()];
        let prefix_slots = self.weights.iter().filter(|w| !w.2).count();
        let mut step_spikes = vec![0u64; self.neurons.len()];

        for t in 1..=cfg.timesteps {
            for (slot, w) in self.weights.iter().enumerate().take(prefix_slots) {
                run.events[slot] += w.1 as u64;
            }
            step_spikes.fill(0);
            let mut sig = Signal::Current(constant.clone());
            for op in &self.ops {
                sig = match op {
                    Op::Neuron { slot, neurons } => {
                        let current = sig.into_current();
                        let mut bits = SpikeVector::new(*neurons);
                        let neuron = &mut state.neurons[*slot];
                        step_spikes[*slot] = neuron.step(&current, &mut bits);
                        Signal::Spikes {
                            bits,
                            amplitude: neuron.threshold(),
                        }
                    }
                    Op::Weight(w) => Signal::Current(Self::weight_forward(w, sig, &mut run.events)),
                    Op::AvgPool { c, h, w } => Self::pool(sig, *c, *h, *w, false),
                    Op::MaxPool { c, h, w } => Self::pool(sig, *c, *h, *w, true),
                    Op::Accumulate => {
                        let current = sig.into_current();
                        state.accumulator.iter_mut().zip(&current).for_each(|(a, &c)| *a += c);
                        Signal::Current(current)
                    }
                    Op::Identity => sig,
                };
            }
            for (total, &s) in run.spikes.iter_mut().zip(&step_spikes) {
                *total += s;
            }
            if cfg.record_trace {
                run.trace.push(step_spikes.clone());
                run.event_trace.push(run.events.iter().zip(&events_before).map(|(a, b)| a - b).collect());
                events_before.copy_from_slice(&run.events);
            }
            let prediction = argmax(&state.accumulator);
            let max_potential = state.accumulator.get(prediction).copied().unwrap_or(0.0);
            if cfg.record_trajectory {
                run.trajectory.push(StepRecord {
                    prediction: prediction as u32,
                    max_potential,
                });
            }
            if cfg.theta.is_some_and(|theta| max_potential >= theta) {
                run.result.exit_timestep = t;
                break;
            }
        }
        run.result.prediction = argmax(&state.accumulator);
        run.result.potentials = state.accumulator;
        Ok(run)
    }

    pub fn run(&self, images: &Tensor, cfg: &SimConfig) -> Result<InferenceResult, SimError> {
        cfg.validate()?;
        if images.ndim() == 0 || images.shape()[1..] != self.graph.input_shape[..] {
            return Err(SimError::InputShape {
                expected: self.graph.input_shape.clone(),
                got: images.shape().get(1..).unwrap_or_default().to_vec(),
            });
        }
        let n = images.shape()[0];
        let runs: Vec<SampleRun> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(cfg.batch_size)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| self.simulate(images.sample(i), cfg))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();

        let mut if_layers: Vec<LayerActivity> = self
            .neurons
            .iter()
            .map(|&(layer, neurons, _, _)| LayerActivity {
                layer,
                neurons,
                spikes: 0,
            })
            .collect();
        let mut weight_layers: Vec<WeightActivity> = self
            .weights
            .iter()
            .map(|&(layer, inputs, spiking_input)| WeightActivity {
                layer,
                inputs,
                events: 0,
                spiking_input,
            })
            .collect();
        let mut trace = cfg.record_trace.then(|| vec![vec![0u64; self.neurons.len()]; cfg.timesteps]);
        let mut event_trace = cfg.record_trace.then(|| vec![vec![0u64; self.weights.len()]; cfg.timesteps]);
        for r in &runs {
            for (l, &s) in if_layers.iter_mut().zip(&r.spikes) {
                l.spikes += s;
            }
            for (w, &e) in weight_layers.iter_mut().zip(&r.events) {
                w.events += e;
            }
            for (total, per_sample) in [(&mut trace, &r.trace), (&mut event_trace, &r.event_trace)] {
                if let Some(total) = total.as_mut() {
                    for (row, step) in total.iter_mut().zip(per_sample) {
                        row.iter_mut().zip(step).for_each(|(a, &b)| *a += b);
                    }
                }
            }
        }
        if !cfg.record_ifr {
            if_layers.clear();
            weight_layers.clear();
        }
        let trajectories = cfg
            .record_trajectory
            .then(|| runs.iter().map(|r| r.trajectory.clone()).collect());
        Ok(InferenceResult {
            timesteps: cfg.timesteps,
            samples: runs.into_iter().map(|r| r.result).collect(),
            if_layers,
            weight_layers,
            trace,
            event_trace,
            trajectories,
        })
    }
}

struct SampleRun {
    result: SampleResult,
    spikes: Vec<u64>,
    events: Vec<u64>,
    trace: Vec<Vec<u64>>,
    event_trace: Vec<Vec<u64>>,
    trajectory: Vec<StepRecord>,
}

/// Runs the full window of `cfg.timesteps`, ignoring any confidence threshold.
pub fn run_inference(snn: &ModelGraph, images: &Tensor, cfg: &SimConfig) -> Result<InferenceResult, SimError> {
    let cfg = SimConfig {
        theta: None,
        ..cfg.clone()
    };
    Simulator::new(snn)?.run(images, &cfg)
}

/// Stops each sample at the first timestep whose largest output potential reaches `cfg.theta`.
pub fn early_exit_inference(snn: &ModelGraph, images: &Tensor, cfg: &SimConfig) -> Result<InferenceResult, SimError> {
    if cfg.theta.is_none() {
        return Err(SimError::MissingTheta);
    }
    Simulator::new(snn)?.run(images, cfg)
}

/// CSV columns: `sample,prediction,label,exit_timestep`; `label` is empty when unknown.
pub fn write_results_csv(result: &InferenceResult, labels: Option<&[u32]>, out: impl Write) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "prediction", "label", "exit_timestep"])?;
    for (i, s) in result.samples.iter().enumerate() {
        let label = labels.and_then(|l| l.get(i)).map(|l| l.to_string()).unwrap_or_default();
        w.write_record([i.to_string(), s.prediction.to_string(), label, s.exit_timestep.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// CSV columns: `timestep` then one `layer_<index>` column of spike totals per IF layer.
pub fn write_trace_csv(result: &InferenceResult, snn: &ModelGraph, out: impl Write) -> Result<(), SimError> {
    let trace = result
        .trace
        .as_ref()
        .ok_or_else(|| SimError::InvalidConfig("no trace was recorded".into()))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestep".to_string()];
    header.extend(snn.if_layers().iter().map(|l| format!("layer_{l}")));
    w.write_record(&header)?;
    for (t, row) in trace.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
