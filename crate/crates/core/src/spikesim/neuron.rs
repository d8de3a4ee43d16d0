use crate::graph::ResetMode;
use crate::train::{BinarizedWeights, BinaryRow};

use super::SimError;

/// One bit per neuron for a single timestep; 1 means the neuron fired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeVector {
    len: usize,
    words: Vec<u64>,
}

impl SpikeVector {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::new(bits.len());
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            v.set(i);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn clear(&mut self) {
        self.words.fill(0);
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    /// Indices of set bits in increasing order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Membrane potentials of one IF layer, integrated in double precision so
/// that charge is conserved over long windows.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState {
    v_mem: Vec<f64>,
    reset: ResetMode,
    v_th: f32,
}

impl NeuronState {
    pub fn new(neurons: usize, reset: ResetMode, v_th: f32) -> Self {
        Self {
            v_mem: vec![0.0; neurons],
            reset,
            v_th,
        }
    }

    pub fn potentials(&self) -> &[f64] {
        &self.v_mem
    }

    pub fn threshold(&self) -> f32 {
        self.v_th
    }

    pub fn reset_mode(&self) -> ResetMode {
        self.reset
    }

    pub fn len(&self) -> usize {
        self.v_mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_mem.is_empty()
    }

    /// Integrates one timestep of input current into `out` and returns the
    /// number of spikes. A neuron fires at most once per step.
    pub fn step(&mut self, input: &[f32], out: &mut SpikeVector) -> u64 {
        debug_assert_eq!(input.len(), self.v_mem.len());
        out.clear();
        let v_th = self.v_th as f64;
        let mut fired = 0;
        for (i, (v, &x)) in self.v_mem.iter_mut().zip(input).enumerate() {
            *v += x as f64;
            if *v >= v_th {
                out.set(i);
                fired += 1;
                *v = match self.reset {
                    ResetMode::Sif => *v - v_th,
                    ResetMode::Rif => 0.0,
                };
            }
        }
        fired
    }

    pub fn reset(&mut self) {
        self.v_mem.fill(0.0);
    }
}

pub fn if_step(state: &mut NeuronState, input: &[f32]) -> Result<SpikeVector, SimError> {
    if input.len() != state.len() {
        return Err(SimError::LengthMismatch {
            expected: state.len(),
            got: input.len(),
        });
    }
    let mut out = SpikeVector::new(state.len());
    state.step(input, &mut out);
    Ok(out)
}

/// `popcount(s & plus) - popcount(s & minus)` over packed words of equal length.
#[inline]
pub(crate) fn signed_popcount(spikes: &[u64], plus: &[u64]) -> i64 {
    spikes
        .iter()
        .zip(plus)
        .map(|(&s, &p)| (s & p).count_ones() as i64 - (s & !p).count_ones() as i64)
        .sum()
}

/// Signed spike count against one packed filter, before scaling.
pub fn binary_dot_count(spikes: &SpikeVector, row: BinaryRow<'_>) -> Result<i64, SimError> {
    if spikes.len() != row.len {
        return Err(SimError::LengthMismatch {
            expected: row.len,
            got: spikes.len(),
        });
    }
    Ok(signed_popcount(&spikes.words, row.words))
}

/// Dot product of a {0,1} spike vector with `alpha · sign(w)`.
pub fn binary_dot(spikes: &SpikeVector, row: BinaryRow<'_>) -> Result<f32, SimError> {
    Ok(row.alpha * binary_dot_count(spikes, row)? as f32)
}

/// Applies [`binary_dot`] to every row of `weights`.
pub fn binary_matvec(spikes: &SpikeVector, weights: &BinarizedWeights) -> Result<Vec<f32>, SimError> {
    (0..weights.rows()).map(|r| binary_dot(spikes, weights.row(r))).collect()
}

/// Every IF layer's potentials plus the output accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub neurons: Vec<NeuronState>,
    pub accumulator: Vec<f32>,
}

impl SimState {
    pub fn reset(&mut self) {
        self.neurons.iter_mut().for_each(NeuronState::reset);
        self.accumulator.fill(0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.neurons.iter().all(|n| n.v_mem.iter().all(|&v| v == 0.0)) && self.accumulator.iter().all(|&v| v == 0.0)
    }
}
