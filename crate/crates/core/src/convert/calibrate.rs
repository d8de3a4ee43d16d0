use std::collections::HashMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{if_sites, ConversionConfig, ConvertError, SiteKind};
use crate::graph::{Mode, ModelGraph};
use crate::tensor::Tensor;
use crate::train::{forward_observe, TrainError};

/// Per-sample maxima of the rectified activation at one future IF site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteStats {
    pub site: usize,
    pub kind: SiteKind,
    pub ann_layer: usize,
    /// One value per calibration sample, in sample order.
    pub maxima: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    pub sites: Vec<SiteStats>,
    pub samples: usize,
}

const CALIBRATION_BATCH: usize = 64;

/// Runs the ANN in inference mode over `images` and records, per sample and
/// per IF site, the largest rectified activation.
pub fn record_activation_stats(
    ann: &ModelGraph,
    images: &Tensor,
    cfg: &ConversionConfig,
) -> Result<ActivationStats, ConvertError> {
    if cfg.arch != ann.arch {
        return Err(ConvertError::ArchMismatch {
            config: cfg.arch.to_string(),
            model: ann.arch.to_string(),
        });
    }
    if ann.mode != Mode::Ann {
        return Err(TrainError::WrongMode.into());
    }
    let n = images.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(ConvertError::EmptyCalibration);
    }
    let sites = if_sites(ann);
    let by_layer: HashMap<usize, usize> = sites.iter().map(|s| (s.ann_layer, s.id)).collect();
    let mut maxima = vec![Vec::with_capacity(n); sites.len()];

    let mut start = 0;
    while start < n {
        let count = CALIBRATION_BATCH.min(n - start);
        let x = images.slice_batch(start, count).map_err(TrainError::from)?;
        forward_observe(ann, &x, |layer, y| {
            if let Some(&site) = by_layer.get(&layer) {
                let per = y.sample_len();
                maxima[site].extend(y.data().chunks(per).map(|s| s.iter().fold(0.0f32, |m, &v| m.max(v))));
            }
        })?;
        start += count;
    }

    Ok(ActivationStats {
        sites: sites
            .into_iter()
            .zip(maxima)
            .map(|(s, maxima)| SiteStats {
                site: s.id,
                kind: s.kind,
                ann_layer: s.ann_layer,
                maxima,
            })
            .collect(),
        samples: n,
    })
}

/// Uniform sample of `size` distinct indices from `0..n`, sorted.
pub fn calibration_subset(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Nearest-rank percentile: the `ceil(p/100 · n)`-th smallest value.
pub fn nearest_rank(values: &[f32], p: f64) -> Result<f32, ConvertError> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(ConvertError::InvalidPercentile(p));
    }
    if values.is_empty() {
        return Err(ConvertError::EmptyCalibration);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let n = sorted.len();
    // The small slack keeps products like 99.7 * 1000 / 100 from rounding up a rank.
    let rank = ((p * n as f64 / 100.0) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub site: usize,
    /// ANN layer whose activations were calibrated.
    pub layer: usize,
    pub v_th: f32,
    pub percentile: f64,
    pub subset_size: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdProfile {
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdProfile {
    pub fn threshold(&self, site: usize) -> Option<f32> {
        self.entries.iter().find(|e| e.site == site).map(|e| e.v_th)
    }
}

pub fn compute_thresholds(stats: &ActivationStats, p: f64) -> Result<ThresholdProfile, ConvertError> {
    let mut entries = Vec::with_capacity(stats.sites.len());
    for s in &stats.sites {
        let v_th = nearest_rank(&s.maxima, p)?;
        if !(v_th > 0.0 && v_th.is_finite()) {
            return Err(ConvertError::DegenerateThreshold { site: s.site, value: v_th });
        }
        entries.push(ThresholdEntry {
            site: s.site,
            layer: s.ann_layer,
            v_th,
            percentile: p,
            subset_size: s.maxima.len(),
        });
    }
    Ok(ThresholdProfile { entries })
}

/// CSV columns: `site,layer,v_th,percentile,subset_size`.
pub fn write_profile_csv(profile: &ThresholdProfile, out: impl Write) -> Result<(), ConvertError> {
    let mut w = csv::Writer::from_writer(out);
    for e in &profile.entries {
        w.serialize(e)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_profile_csv(input: impl Read) -> Result<ThresholdProfile, ConvertError> {
    let mut r = csv::Reader::from_reader(input);
    let entries: Vec<ThresholdEntry> = r.deserialize().collect::<Result<_, _>>()?;
    for e in &entries {
        if !(e.v_th > 0.0 && e.v_th.is_finite()) {
            return Err(ConvertError::DegenerateThreshold { site: e.site, value: e.v_th });
        }
    }
    Ok(ThresholdProfile { entries })
}
