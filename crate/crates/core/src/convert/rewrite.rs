use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ConvertError, ThresholdProfile};
use crate::graph::{validate, ArchOption, LayerKind, LayerSpec, Mode, ModelGraph, ParamKey, ResetMode};

/// Where an IF layer of the converted graph sits relative to the source ANN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    /// Replaces a ReLU.
    Relu,
    /// Extra neuron after an average pool (avg-after option).
    PostPool,
    /// Extra neuron between a conv and the max pool that follows it (max-before option).
    PreMaxPool,
}

/// One IF site; `ann_layer` is the ANN layer whose (rectified) output the site's neurons mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IfSite {
    pub id: usize,
    pub kind: SiteKind,
    pub ann_layer: usize,
}

/// Threshold source for the extra IF layers of the avg-after and max-before options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InsertedThreshold {
    /// Calibrated from the site's own activation statistics.
    Calibrated,
    /// Copied from the adjacent ReLU site in the same block.
    Inherit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionConfig {
    pub arch: ArchOption,
    pub reset: ResetMode,
    pub percentile: f64,
    pub calibration_size: usize,
    pub seed: u64,
    pub inserted: InsertedThreshold,
}

impl ConversionConfig {
    pub fn new(arch: ArchOption) -> Self {
        Self {
            arch,
            reset: ResetMode::Sif,
            percentile: 100.0,
            calibration_size: 256,
            seed: 0,
            inserted: InsertedThreshold::Calibrated,
        }
    }
}

/// IF sites the conversion of `ann` produces, in graph order.
pub fn if_sites(ann: &ModelGraph) -> Vec<IfSite> {
    let mut sites = Vec::new();
    for (i, layer) in ann.layers.iter().enumerate() {
        let kind = match layer.kind {
            LayerKind::Conv { .. }
                if ann.arch == ArchOption::MaxBefore
                    && matches!(ann.layers.get(i + 1).map(|l| &l.kind), Some(LayerKind::MaxPool)) =>
            {
                SiteKind::PreMaxPool
            }
            LayerKind::Relu => SiteKind::Relu,
            LayerKind::AvgPool if ann.arch == ArchOption::AvgAfter => SiteKind::PostPool,
            _ => continue,
        };
        sites.push(IfSite {
            id: sites.len(),
            kind,
            ann_layer: i,
        });
    }
    sites
}

fn site_threshold(
    sites: &[IfSite],
    idx: usize,
    profile: &ThresholdProfile,
    mode: InsertedThreshold,
) -> Result<f32, ConvertError> {
    let site = sites[idx];
    let source = match (site.kind, mode) {
        (SiteKind::Relu, _) | (_, InsertedThreshold::Calibrated) => Some(site.id),
        (SiteKind::PostPool, InsertedThreshold::Inherit) => {
            sites[..idx].iter().rev().find(|s| s.kind == SiteKind::Relu).map(|s| s.id)
        }
        (SiteKind::PreMaxPool, InsertedThreshold::Inherit) => {
            sites[idx + 1..].iter().find(|s| s.kind == SiteKind::Relu).map(|s| s.id)
        }
    };
    source
        .and_then(|id| profile.threshold(id))
        .ok_or(ConvertError::MissingThreshold { site: site.id })
}

/// Rewrites a trained ANN into an SNN-mode graph. Weight tensors are shared
/// with the source, not copied.
pub fn convert_to_snn(
    ann: &ModelGraph,
    profile: &ThresholdProfile,
    cfg: &ConversionConfig,
) -> Result<ModelGraph, ConvertError> {
    if cfg.arch != ann.arch {
        return Err(ConvertError::ArchMismatch {
            config: cfg.arch.to_string(),
            model: ann.arch.to_string(),
        });
    }
    if ann.mode != Mode::Ann {
        return Err(ConvertError::Unsupported("source graph is already spiking".into()));
    }
    if ann.uses_sign_activation() {
        return Err(ConvertError::Unsupported("sign-activation networks have no ReLU sites".into()));
    }
    validate(ann).map_err(ConvertError::InvalidSource)?;

    let sites = if_sites(ann);
    let mut thresholds = BTreeMap::new();
    for (idx, site) in sites.iter().enumerate() {
        thresholds.insert(site.ann_layer, site_threshold(&sites, idx, profile, cfg.inserted)?);
    }
    let neuron = |layer: usize| {
        LayerSpec::new(LayerKind::If {
            reset: cfg.reset,
            threshold: Some(thresholds[&layer]),
        })
    };

    let mut layers = Vec::with_capacity(ann.layers.len() + sites.len() + 1);
    let mut params = BTreeMap::new();
    for (i, layer) in ann.layers.iter().enumerate() {
        match layer.kind {
            LayerKind::Relu => layers.push(neuron(i)),
            _ => {
                if let Some(w) = ann.weight(i) {
                    params.insert(ParamKey::weight(layers.len()), Arc::clone(w));
                }
                layers.push(layer.clone());
                let inserted = thresholds.contains_key(&i);
                if inserted {
                    layers.push(neuron(i));
                }
                if layer.is_last {
                    layers.push(LayerSpec::new(LayerKind::Accumulator));
                }
            }
        }
    }

    let mut metadata = ann.metadata.clone();
    metadata.insert("reset".into(), cfg.reset.to_string());
    metadata.insert("percentile".into(), cfg.percentile.to_string());
    metadata.insert("calibration_size".into(), cfg.calibration_size.to_string());
    metadata.insert("calibration_seed".into(), cfg.seed.to_string());
    let snn = ModelGraph {
        input_shape: ann.input_shape.clone(),
        layers,
        params,
        mode: Mode::Snn,
        arch: ann.arch,
        metadata,
    };
    validate(&snn).map_err(ConvertError::InvalidResult)?;
    Ok(snn)
}

/// One line of the ANN-site to IF-layer correspondence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRow {
    pub site: usize,
    pub kind: SiteKind,
    pub ann_layer: usize,
    pub snn_layer: usize,
    pub threshold: f32,
}

pub fn conversion_report(ann: &ModelGraph, snn: &ModelGraph) -> Result<Vec<SiteRow>, ConvertError> {
    let sites = if_sites(ann);
    let if_layers = snn.if_layers();
    if sites.len() != if_layers.len() {
        return Err(ConvertError::Format(format!(
            "ANN has {} IF sites but the SNN has {} IF layers",
            sites.len(),
            if_layers.len()
        )));
    }
    Ok(sites
        .iter()
        .zip(if_layers)
        .map(|(site, l)| SiteRow {
            site: site.id,
            kind: site.kind,
            ann_layer: site.ann_layer,
            snn_layer: l,
            threshold: match snn.layers[l].kind {
                LayerKind::If { threshold, .. } => threshold.unwrap_or(f32::NAN),
                _ => unreachable!("if_layers returns IF layers"),
            },
        })
        .collect())
}

pub fn write_report_csv(rows: &[SiteRow], out: impl Write) -> Result<(), ConvertError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_report_csv(input: impl Read) -> Result<Vec<SiteRow>, ConvertError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
