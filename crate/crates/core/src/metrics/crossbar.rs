use serde::{Deserialize, Serialize};

use crate::spikesim::InferenceResult;

/// How inputs drive the word lines of an in-memory computing array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    /// ±1 inputs on two rows per input; one of the pair is always active.
    Bnn,
    /// {0,1} spikes on a single row per input; rows switch only on a spike.
    Bsnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarModel {
    pub encoding: Encoding,
    pub rows_per_input: usize,
    pub inputs: usize,
    pub cycles: u64,
    pub row_activations: u64,
}

impl CrossbarModel {
    pub fn bnn(inputs: usize, cycles: u64) -> Self {
        Self {
            encoding: Encoding::Bnn,
            rows_per_input: 2,
            inputs,
            cycles,
            row_activations: inputs as u64 * cycles,
        }
    }

    /// `spikes_per_cycle[t]` is the number of inputs that spiked in cycle `t`.
    pub fn bsnn(inputs: usize, spikes_per_cycle: &[u64]) -> Self {
        Self {
            encoding: Encoding::Bsnn,
            rows_per_input: 1,
            inputs,
            cycles: spikes_per_cycle.len() as u64,
            row_activations: spikes_per_cycle.iter().sum(),
        }
    }

    pub fn rows(&self) -> usize {
        self.inputs * self.rows_per_input
    }
}

/// Array area of `candidate` relative to `reference`, by row count.
pub fn area_factor(candidate: &CrossbarModel, reference: &CrossbarModel) -> f64 {
    candidate.rows() as f64 / reference.rows() as f64
}

/// Row activity of every spike-driven layer of a simulated network, against
/// a binary network that evaluates each sample once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarLayer {
    pub layer: usize,
    pub inputs: usize,
    pub bnn_row_activations: u64,
    pub bsnn_row_activations: u64,
    pub area_factor: f64,
}

pub fn crossbar_activity(result: &InferenceResult) -> Vec<CrossbarLayer> {
    let samples = result.samples.len() as u64;
    result
        .weight_layers
        .iter()
        .filter(|w| w.spiking_input)
        .map(|w| {
            let bnn = CrossbarModel::bnn(w.inputs, samples);
            let bsnn = CrossbarModel::bsnn(w.inputs, &[w.events]);
            CrossbarLayer {
                layer: w.layer,
                inputs: w.inputs,
                bnn_row_activations: bnn.row_activations,
                bsnn_row_activations: bsnn.row_activations,
                area_factor: area_factor(&bsnn, &bnn),
            }
        })
        .collect()
}
