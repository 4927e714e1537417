//! Named parameter storage, initialization and the on-disk weights format.
//!
//! A weights file is a JSON manifest next to a `.bin` blob holding every
//! tensor as contiguous little-endian `f32`, in manifest order.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::Scalar;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// Ordered collection of named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor<f32>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Weights(format!("duplicate parameter {name}")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds every parameter to `g` as a trainable leaf, in store order.
    pub fn bind<F: Scalar>(&self, g: &mut Graph<F>) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| g.param(t.cast())).collect()
    }

    /// Same as [`bind`](Self::bind) but as constants (inference only).
    pub fn bind_const<F: Scalar>(&self, g: &mut Graph<F>) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| g.input(t.cast())).collect()
    }

    /// Checks that names and shapes equal `other`'s.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Weights(format!("expected {} tensors, found {}", other.len(), self.len())));
        }
        for ((n, t), (m, u)) in self.entries.iter().zip(&other.entries) {
            if n != m || t.shape() != u.shape() {
                return Err(Error::Weights(format!(
                    "tensor {n} {:?} does not match expected {m} {:?}",
                    t.shape(),
                    u.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Kaiming-uniform init: `U(−b, b)` with `b = √(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<f32> {
    uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
}

pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound) as f32).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WeightsManifest {
    pub format_version: u32,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (manifest) and its sibling `.bin` blob.
pub fn save_weights(path: &Path, store: &ParamStore, config: Option<serde_json::Value>) -> Result<()> {
    let blob = blob_path(path);
    let mut bytes = Vec::with_capacity(store.num_scalars() * 4);
    let mut layers = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (name, t) in store.iter() {
        layers.push(LayerEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = WeightsManifest {
        format_version: WEIGHTS_FORMAT_VERSION,
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        layers,
        config,
    };
    write_atomic(&blob, &bytes)?;
    write_atomic(path, &serde_json::to_vec_pretty(&manifest)?)
}

/// Reads a manifest and its blob.
pub fn load_weights(path: &Path) -> Result<(ParamStore, WeightsManifest)> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: WeightsManifest = serde_json::from_slice(&text)?;
    if manifest.format_version != WEIGHTS_FORMAT_VERSION {
        return Err(Error::Weights(format!(
            "unsupported format version {} (expected {WEIGHTS_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let blob = path.with_file_name(&manifest.blob);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Weights(format!("blob length {} is not a multiple of 4", bytes.len())));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut store = ParamStore::new();
    for l in &manifest.layers {
        let n: usize = l.shape.iter().product();
        if n != l.len || l.offset + l.len > floats.len() {
            return Err(Error::Weights(format!("layer {} is out of range of the blob", l.name)));
        }
        let t = Tensor::new(&l.shape, floats[l.offset..l.offset + l.len].to_vec())?;
        store.insert(l.name.clone(), t)?;
    }
    Ok((store, manifest))
}
