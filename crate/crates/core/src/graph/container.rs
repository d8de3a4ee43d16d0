//! Binary container shared by models (`BSNN`) and datasets (`BSND`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes   "BSNN" | "BSND"
//! version    u32
//! manifest   u64 length, then UTF-8 JSON
//! payload    raw little-endian f32 / u32 values, row-major
//! ```
//!
//! The manifest records every payload region by byte offset (relative to the
//! start of the payload) and length. Regions must tile the payload exactly.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ir::{ArchOption, LayerSpec, Mode, ModelGraph, ParamKey, ParamRole};
use super::GraphError;
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"BSNN";
pub const DATASET_MAGIC: &[u8; 4] = b"BSND";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Region {
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    role: ParamRole,
    shape: Vec<usize>,
    #[serde(flatten)]
    region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    input_shape: Vec<usize>,
    mode: Mode,
    arch: ArchOption,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetManifest {
    classes: usize,
    image_shape: Vec<usize>,
    images: Region,
    label_count: usize,
    labels: Region,
}

/// Labelled images `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u32>, classes: usize) -> Result<Self, GraphError> {
        let ds = Self {
            images,
            labels,
            classes,
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<(), GraphError> {
        if self.labels.is_empty() {
            return Err(GraphError::EmptyDataset);
        }
        if self.images.ndim() != 4 || self.images.shape()[0] != self.labels.len() {
            return Err(GraphError::Malformed(format!(
                "images {:?} do not match {} labels",
                self.images.shape(),
                self.labels.len()
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l as usize >= self.classes) {
            return Err(GraphError::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self, GraphError> {
        let images = self.images.select_batch(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(images, labels, self.classes)
    }

    /// Splits off the trailing `count` samples, returning `(head, tail)`.
    pub fn split_tail(&self, count: usize) -> Result<(Self, Self), GraphError> {
        let n = self.len();
        if count == 0 || count >= n {
            return Err(GraphError::InvalidConfig(format!("cannot split {count} of {n} samples")));
        }
        let head: Vec<usize> = (0..n - count).collect();
        let tail: Vec<usize> = (n - count..n).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }
}

fn frame(magic: &[u8; 4], manifest: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + manifest.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest);
    out.extend_from_slice(payload);
    out
}

fn unframe<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8]), GraphError> {
    let kind = std::str::from_utf8(magic).unwrap_or("?");
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(GraphError::BadMagic(kind.to_string()));
    }
    if bytes.len() < 16 {
        return Err(GraphError::Truncated("header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(GraphError::UnsupportedVersion(version));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[16..];
    if len > rest.len() as u64 {
        return Err(GraphError::Truncated("manifest".into()));
    }
    Ok(rest.split_at(len as usize))
}

/// Regions must be non-overlapping and cover the payload exactly.
fn check_regions(regions: &[&Region], payload_len: usize) -> Result<(), GraphError> {
    let mut sorted: Vec<&Region> = regions.to_vec();
    sorted.sort_by_key(|r| r.offset);
    let mut cursor = 0u64;
    for r in sorted {
        if r.offset < cursor {
            return Err(GraphError::OverlappingOffsets { offset: r.offset });
        }
        if r.offset > cursor {
            return Err(GraphError::Malformed(format!("gap in payload before offset {}", r.offset)));
        }
        cursor = r.offset.checked_add(r.nbytes).ok_or_else(|| GraphError::Malformed("region overflow".into()))?;
    }
    if cursor > payload_len as u64 {
        return Err(GraphError::Truncated("payload".into()));
    }
    if cursor < payload_len as u64 {
        return Err(GraphError::Malformed(format!(
            "payload has {} trailing bytes",
            payload_len as u64 - cursor
        )));
    }
    Ok(())
}

fn push_f32s(payload: &mut Vec<u8>, values: &[f32]) -> Region {
    let offset = payload.len() as u64;
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    Region {
        offset,
        nbytes: payload.len() as u64 - offset,
    }
}

fn read_f32s(payload: &[u8], region: &Region, count: usize) -> Result<Vec<f32>, GraphError> {
    if region.nbytes != 4 * count as u64 {
        return Err(GraphError::Malformed(format!(
            "region of {} bytes cannot hold {count} values",
            region.nbytes
        )));
    }
    let start = region.offset as usize;
    Ok(payload[start..start + region.nbytes as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn model_to_bytes(graph: &ModelGraph) -> Result<Vec<u8>, GraphError> {
    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(graph.params.len());
    for (key, tensor) in &graph.params {
        let region = push_f32s(&mut payload, tensor.data());
        tensors.push(TensorEntry {
            layer: key.layer,
            role: key.role,
            shape: tensor.shape().to_vec(),
            region,
        });
    }
    let manifest = ModelManifest {
        input_shape: graph.input_shape.clone(),
        mode: graph.mode,
        arch: graph.arch,
        layers: graph.layers.clone(),
        tensors,
        metadata: graph.metadata.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    Ok(frame(MODEL_MAGIC, &json, &payload))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelGraph, GraphError> {
    let (json, payload) = unframe(MODEL_MAGIC, bytes)?;
    let manifest: ModelManifest = serde_json::from_slice(json)?;
    let regions: Vec<&Region> = manifest.tensors.iter().map(|t| &t.region).collect();
    check_regions(&regions, payload.len())?;
    let mut params = BTreeMap::new();
    for entry in &manifest.tensors {
        let count = entry.shape.iter().product();
        let data = read_f32s(payload, &entry.region, count)?;
        let key = ParamKey {
            layer: entry.layer,
            role: entry.role,
        };
        if params.insert(key, Arc::new(Tensor::new(entry.shape.clone(), data)?)).is_some() {
            return Err(GraphError::Malformed(format!("duplicate tensor for layer {}", entry.layer)));
        }
    }
    Ok(ModelGraph {
        input_shape: manifest.input_shape,
        layers: manifest.layers,
        params,
        mode: manifest.mode,
        arch: manifest.arch,
        metadata: manifest.metadata,
    })
}

pub fn save_model(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    std::fs::write(path, model_to_bytes(graph)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph, GraphError> {
    model_from_bytes(&std::fs::read(path)?)
}

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>, GraphError> {
    ds.check()?;
    let mut payload = Vec::new();
    let images = push_f32s(&mut payload, ds.images.data());
    let offset = payload.len() as u64;
    for l in &ds.labels {
        payload.extend_from_slice(&l.to_le_bytes());
    }
    let labels = Region {
        offset,
        nbytes: payload.len() as u64 - offset,
    };
    let manifest = DatasetManifest {
        classes: ds.classes,
        image_shape: ds.images.shape().to_vec(),
        images,
        label_count: ds.labels.len(),
        labels,
    };
    Ok(frame(DATASET_MAGIC, &serde_json::to_vec(&manifest)?, &payload))
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset, GraphError> {
    let (json, payload) = unframe(DATASET_MAGIC, bytes)?;
    let m: DatasetManifest = serde_json::from_slice(json)?;
    if m.label_count == 0 || m.image_shape.first() == Some(&0) {
        return Err(GraphError::EmptyDataset);
    }
    check_regions(&[&m.images, &m.labels], payload.len())?;
    let count = m.image_shape.iter().product();
    let images = Tensor::new(m.image_shape, read_f32s(payload, &m.images, count)?)?;
    if m.labels.nbytes != 4 * m.label_count as u64 {
        return Err(GraphError::Malformed("label region size".into()));
    }
    let start = m.labels.offset as usize;
    let labels = payload[start..start + m.labels.nbytes as usize]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(images, labels, m.classes)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), GraphError> {
    std::fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, GraphError> {
    dataset_from_bytes(&std::fs::read(path)?)
}
