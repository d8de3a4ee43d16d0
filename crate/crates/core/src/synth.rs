//! Deterministic synthetic image sets: one oriented grating per class plus noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{Dataset, GraphError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples: usize,
    pub channels: usize,
    pub size: usize,
    pub seed: u64,
    /// Standard deviation of the additive pixel noise (grating amplitude is 1).
    pub noise: f64,
    /// Spatial frequency in cycles per pixel.
    pub frequency: f64,
    pub frequency_jitter: f64,
    /// Half-width of the uniform phase jitter around each class's base phase, in radians.
    pub phase_jitter: f64,
    /// Half-width of the uniform orientation jitter, in radians.
    pub orientation_jitter: f64,
}

impl SynthConfig {
    pub fn new(classes: usize, samples: usize, size: usize, seed: u64) -> Self {
        Self {
            classes,
            samples,
            channels: 1,
            size,
            seed,
            noise: 0.6,
            frequency: 0.18,
            frequency_jitter: 0.03,
            phase_jitter: PI / 3.0,
            orientation_jitter: 0.1,
        }
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::InvalidConfig(m.to_string()));
        if self.classes < 2 {
            return bad("at least two classes are required");
        }
        if self.samples == 0 {
            return Err(GraphError::EmptyDataset);
        }
        if self.channels == 0 || self.size < 2 {
            return bad("images need at least one channel and an extent of 2");
        }
        let finite = [self.noise, self.frequency, self.frequency_jitter, self.phase_jitter, self.orientation_jitter];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("noise, frequency and jitter parameters must be finite and non-negative");
        }
        Ok(())
    }
}

/// Generates a class-balanced, shuffled set normalized to zero mean and unit
/// variance per channel. The same config always yields the same bits.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, GraphError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<u32> = (0..cfg.samples).map(|i| (i % cfg.classes) as u32).collect();
    labels.shuffle(&mut rng);

    let noise = Normal::new(0.0, cfg.noise).map_err(|e| GraphError::InvalidConfig(e.to_string()))?;
    let (c, s) = (cfg.channels, cfg.size);
    let plane = s * s;
    let mut data = vec![0.0f32; cfg.samples * c * plane];
    for (img, &label) in data.chunks_mut(c * plane).zip(&labels) {
        let k = label as f64;
        let theta = PI * k / cfg.classes as f64 + rng.random_range(-1.0..=1.0) * cfg.orientation_jitter;
        let freq = cfg.frequency + rng.random_range(-1.0..=1.0) * cfg.frequency_jitter;
        let phase = 2.0 * PI * k / cfg.classes as f64 + rng.random_range(-1.0..=1.0) * cfg.phase_jitter;
        let (dx, dy) = (theta.cos(), theta.sin());
        for (ch, chan) in img.chunks_mut(plane).enumerate() {
            let offset = ch as f64 * PI / 2.0;
            for (p, v) in chan.iter_mut().enumerate() {
                let (y, x) = ((p / s) as f64, (p % s) as f64);
                let wave = (2.0 * PI * freq * (x * dx + y * dy) + phase + offset).cos();
                *v = (wave + noise.sample(&mut rng)) as f32;
            }
        }
    }
    normalize_per_channel(&mut data, c, plane);
    let images = Tensor::new(vec![cfg.samples, c, s, s], data)?;
    Dataset::new(images, labels, cfg.classes)
}

fn normalize_per_channel(data: &mut [f32], channels: usize, plane: usize) {
    for ch in 0..channels {
        let values = || data.chunks(channels * plane).flat_map(|img| &img[ch * plane..(ch + 1) * plane]);
        let n = (data.len() / channels) as f64;
        let mean = values().map(|&v| v as f64).sum::<f64>() / n;
        let var = values().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-12);
        for img in data.chunks_mut(channels * plane) {
            for v in &mut img[ch * plane..(ch + 1) * plane] {
                *v = ((*v as f64 - mean) / std) as f32;
            }
        }
    }
}
