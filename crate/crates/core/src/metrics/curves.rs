use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{MetricsError, OpsReport};
use crate::convert::{compute_thresholds, convert_to_snn, record_activation_stats, ConversionConfig};
use crate::graph::{Dataset, ModelGraph, ResetMode};
use crate::spikesim::{early_exit_inference, InferenceResult, SimConfig, Simulator, StepRecord};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub timestep: usize,
    pub accuracy: f64,
    pub normalized_ops: Option<f64>,
}

fn hit_rate(preds: impl Iterator<Item = usize>, labels: &[u32]) -> f64 {
    let (mut hits, mut n) = (0usize, 0usize);
    for (p, &l) in preds.zip(labels) {
        hits += usize::from(p == l as usize);
        n += 1;
    }
    hits as f64 / n.max(1) as f64
}

/// Accuracy after every timestep of a full-window run, plus normalized OPS
/// when the run kept an event trace.
pub fn accuracy_curve(snn: &ModelGraph, result: &InferenceResult, labels: &[u32]) -> Result<Vec<CurvePoint>, MetricsError> {
    let traj = result.trajectories.as_ref().ok_or(MetricsError::MissingTrajectories)?;
    (1..=result.timesteps)
        .map(|t| {
            let accuracy = hit_rate(traj.iter().map(|s| s[t.min(s.len()) - 1].prediction as usize), labels);
            let normalized_ops = match result.event_trace {
                Some(_) => Some(OpsReport::at_timestep(snn, result, t, false)?.normalized_ops),
                None => None,
            };
            Ok(CurvePoint {
                timestep: t,
                accuracy,
                normalized_ops,
            })
        })
        .collect()
}

/// First timestep whose accuracy reaches `target`.
pub fn timesteps_to_target(curve: &[CurvePoint], target: f64) -> Option<usize> {
    curve.iter().find(|p| p.accuracy >= target).map(|p| p.timestep)
}

/// `(prediction, exit timestep)` per sample if the run had stopped at the
/// first step whose largest output potential reached `theta`.
pub fn exit_at_theta(trajectories: &[Vec<StepRecord>], theta: f32) -> Vec<(usize, usize)> {
    trajectories
        .iter()
        .map(|steps| match steps.iter().position(|s| s.max_potential >= theta) {
            Some(i) => (steps[i].prediction as usize, i + 1),
            None => (steps.last().map_or(0, |s| s.prediction as usize), steps.len()),
        })
        .collect()
}

/// `count` evenly spaced order statistics of all recorded output maxima.
pub fn theta_candidates(result: &InferenceResult, count: usize) -> Result<Vec<f32>, MetricsError> {
    let traj = result.trajectories.as_ref().ok_or(MetricsError::MissingTrajectories)?;
    let mut values: Vec<f32> = traj
        .iter()
        .flatten()
        .map(|s| s.max_potential)
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    if values.is_empty() || count == 0 {
        return Ok(Vec::new());
    }
    values.sort_unstable_by(f32::total_cmp);
    let last = values.len() - 1;
    let mut out: Vec<f32> = (0..count)
        .map(|k| values[if count == 1 { last } else { k * last / (count - 1) }])
        .collect();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub theta_conf: f32,
    pub accuracy: f64,
    pub mean_exit_timestep: f64,
    pub normalized_ops: Option<f64>,
}

/// Picks the confidence threshold with the smallest mean exit timestep whose
/// accuracy stays within `tolerance` of the full window, using a full-window
/// run with trajectories (typically on a validation split).
pub fn select_theta(
    result: &InferenceResult,
    labels: &[u32],
    tolerance: f64,
    candidates: usize,
) -> Result<Option<ThetaPoint>, MetricsError> {
    let traj = result.trajectories.as_ref().ok_or(MetricsError::MissingTrajectories)?;
    let full = hit_rate(traj.iter().map(|s| s.last().map_or(0, |r| r.prediction as usize)), labels);
    let mut best: Option<ThetaPoint> = None;
    for theta in theta_candidates(result, candidates)? {
        let outcome = exit_at_theta(traj, theta);
        let accuracy = hit_rate(outcome.iter().map(|o| o.0), labels);
        if accuracy + 1e-12 < full - tolerance {
            continue;
        }
        let mean_exit = outcome.iter().map(|o| o.1 as f64).sum::<f64>() / outcome.len().max(1) as f64;
        if best.as_ref().is_none_or(|b| mean_exit < b.mean_exit_timestep) {
            best = Some(ThetaPoint {
                theta_conf: theta,
                accuracy,
                mean_exit_timestep: mean_exit,
                normalized_ops: None,
            });
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub theta_conf: Option<f32>,
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
}

/// Exit timesteps in `bins` equal-width bins covering `1..=timesteps`.
pub fn exit_histogram(result: &InferenceResult, bins: usize, theta_conf: Option<f32>) -> Vec<HistBin> {
    let n = result.timesteps.max(1);
    let width = n.div_ceil(bins.max(1));
    let mut out: Vec<HistBin> = (0..n.div_ceil(width))
        .map(|b| HistBin {
            theta_conf,
            lo: b * width + 1,
            hi: ((b + 1) * width).min(n),
            count: 0,
        })
        .collect();
    for s in &result.samples {
        let b = (s.exit_timestep.clamp(1, n) - 1) / width;
        out[b].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub timesteps: usize,
    /// Confidence thresholds for early exit; `None` is the never-exit sentinel.
    pub thetas: Vec<Option<f32>>,
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub accuracy: Vec<CurvePoint>,
    pub theta: Vec<ThetaPoint>,
    pub histograms: Vec<HistBin>,
}

/// Accuracy and normalized OPS against the window length, plus one early-exit
/// run per confidence threshold.
pub fn record_curves(snn: &ModelGraph, data: &Dataset, sim: &SimConfig, spec: &SweepSpec) -> Result<Curves, MetricsError> {
    let full_cfg = SimConfig {
        timesteps: spec.timesteps,
        theta: None,
        record_ifr: true,
        record_trace: true,
        record_trajectory: true,
        ..sim.clone()
    };
    let full = Simulator::new(snn)?.run(&data.images, &full_cfg)?;
    let accuracy = accuracy_curve(snn, &full, &data.labels)?;
    let mut theta = Vec::new();
    let mut histograms = Vec::new();
    for &t in &spec.thetas {
        let cfg = SimConfig {
            timesteps: spec.timesteps,
            theta: Some(t.unwrap_or(f32::INFINITY)),
            record_ifr: true,
            ..sim.clone()
        };
        let r = early_exit_inference(snn, &data.images, &cfg)?;
        theta.push(ThetaPoint {
            theta_conf: t.unwrap_or(f32::INFINITY),
            accuracy: r.accuracy(&data.labels),
            mean_exit_timestep: r.mean_exit_timestep(),
            normalized_ops: Some(OpsReport::from_inference(snn, &r, false)?.normalized_ops),
        });
        histograms.extend(exit_histogram(&r, spec.histogram_bins, t));
    }
    Ok(Curves {
        accuracy,
        theta,
        histograms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileCurve {
    pub percentile: f64,
    pub reset: ResetMode,
    pub curve: Vec<CurvePoint>,
}

/// Converts `ann` once per percentile (statistics are recorded once) and
/// records the accuracy curve of each resulting network on `test`.
pub fn percentile_sweep(
    ann: &ModelGraph,
    calibration: &Tensor,
    test: &Dataset,
    percentiles: &[f64],
    conversion: &ConversionConfig,
    sim: &SimConfig,
) -> Result<Vec<PercentileCurve>, MetricsError> {
    if percentiles.is_empty() {
        return Err(MetricsError::InvalidSweep("no percentiles given".into()));
    }
    let stats = record_activation_stats(ann, calibration, conversion)?;
    let cfg = SimConfig {
        theta: None,
        record_ifr: true,
        record_trace: true,
        record_trajectory: true,
        ..sim.clone()
    };
    percentiles
        .iter()
        .map(|&p| {
            let profile = compute_thresholds(&stats, p)?;
            let snn = convert_to_snn(
                ann,
                &profile,
                &ConversionConfig {
                    percentile: p,
                    ..conversion.clone()
                },
            )?;
            let result = Simulator::new(&snn)?.run(&test.images, &cfg)?;
            Ok(PercentileCurve {
                percentile: p,
                reset: conversion.reset,
                curve: accuracy_curve(&snn, &result, &test.labels)?,
            })
        })
        .collect()
}

pub fn write_rows_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spikesim::SampleResult;

    fn fake(exits: &[usize], timesteps: usize) -> InferenceResult {
        InferenceResult {
            timesteps,
            samples: exits
                .iter()
                .map(|&e| SampleResult {
                    prediction: 0,
                    exit_timestep: e,
                    potentials: vec![],
                })
                .collect(),
            if_layers: vec![],
            weight_layers: vec![],
            trace: None,
            event_trace: None,
            trajectories: None,
        }
    }

    #[test]
    fn histogram_bins_sum_to_sample_count() {
        let r = fake(&[1, 5, 10, 10, 3, 7], 10);
        let h = exit_histogram(&r, 3, None);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 6);
        assert_eq!(h.first().unwrap().lo, 1);
        assert_eq!(h.last().unwrap().hi, 10);
    }

    #[test]
    fn exit_rule_on_trajectories() {
        let step = |p: u32, m: f32| StepRecord {
            prediction: p,
            max_potential: m,
        };
        let traj = vec![vec![step(1, 0.5), step(2, 1.5), step(2, 3.0)], vec![step(0, 0.1), step(3, 0.2), step(1, 0.3)]];
        assert_eq!(exit_at_theta(&traj, 1.0), [(2, 2), (1, 3)]);
        assert_eq!(exit_at_theta(&traj, f32::INFINITY), [(2, 3), (1, 3)]);
        assert_eq!(exit_at_theta(&traj, 1e-6), [(1, 1), (0, 1)]);
    }

    #[test]
    fn target_lookup() {
        let curve: Vec<CurvePoint> = [0.2, 0.5, 0.9, 0.8, 0.95]
            .iter()
            .enumerate()
            .map(|(i, &a)| CurvePoint {
                timestep: i + 1,
                accuracy: a,
                normalized_ops: None,
            })
            .collect();
        assert_eq!(timesteps_to_target(&curve, 0.9), Some(3));
        assert_eq!(timesteps_to_target(&curve, 0.99), None);
    }
}
