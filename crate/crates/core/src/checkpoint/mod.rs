//! Neural networks as data: ordered layer records, the flatten / pad / chunk
//! transform, a little-endian binary container and a JSON export.

mod chunk;
mod json;
mod wire;

pub use chunk::{chunk_layer, flatten, pad_chunk, unpad, ChunkSet, ChunkedLayer, Stream};
pub use json::{from_json, to_json, JSON_FORMAT};
pub use wire::{read_checkpoint, write_checkpoint, MAGIC, VERSION};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found}, expected {expected}")]
    BadVersion { found: u32, expected: u32 },
    #[error("truncated input while reading {0}")]
    Truncated(String),
    #[error("layer {layer}: {msg}")]
    ShapeMismatch { layer: usize, msg: String },
    #[error("unknown layer kind tag {0}")]
    UnknownKind(u8),
    #[error("{0} trailing bytes after metadata block")]
    TrailingBytes(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("layer {layer} has no {stream:?} stream")]
    MissingStream { layer: usize, stream: Stream },
    #[error("metadata is not valid UTF-8")]
    Utf8,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Layer vocabulary; the discriminant is the wire tag. Extend by appending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear = 0,
    Conv2d = 1,
}

impl LayerKind {
    pub const ALL: [LayerKind; 2] = [LayerKind::Linear, LayerKind::Conv2d];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or(CheckpointError::UnknownKind(tag))
    }

    /// Index into the layer-type positional table.
    pub fn type_index(self) -> usize {
        self as usize
    }
}

/// One parameterized layer. Linear weights are `[out, in]`, conv weights
/// `[out, in, k, k]`, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kind: LayerKind,
    pub shape: Vec<usize>,
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub layer_index: usize,
}

impl LayerRecord {
    pub fn new(kind: LayerKind, shape: Vec<usize>, weights: Vec<f32>, bias: Option<Vec<f32>>, layer_index: usize) -> Result<Self> {
        let rec = Self {
            kind,
            shape,
            weights,
            bias,
            layer_index,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| CheckpointError::ShapeMismatch {
            layer: self.layer_index,
            msg,
        };
        match (self.kind, self.shape.as_slice()) {
            (LayerKind::Linear, [_, _]) => {}
            (LayerKind::Conv2d, [_, _, kh, kw]) if kh == kw => {}
            (kind, shape) => return Err(bad(format!("shape {shape:?} is not valid for {kind:?}"))),
        }
        if self.shape.contains(&0) {
            return Err(bad(format!("zero dimension in {:?}", self.shape)));
        }
        let n: usize = self.shape.iter().product();
        if n != self.weights.len() {
            return Err(bad(format!("shape {:?} needs {n} weights, got {}", self.shape, self.weights.len())));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_features() {
                return Err(bad(format!("bias length {} != out features {}", b.len(), self.out_features())));
            }
        }
        if self.weights.iter().chain(self.bias.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn out_features(&self) -> usize {
        self.shape[0]
    }

    pub fn in_features(&self) -> usize {
        self.shape[1]
    }

    /// Kernel side for conv layers, 1 for linear.
    pub fn kernel(&self) -> usize {
        match self.kind {
            LayerKind::Linear => 1,
            LayerKind::Conv2d => self.shape[2],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

pub const META_ARCH: &str = "arch";
pub const META_DATASET: &str = "dataset";
pub const META_ACCURACY: &str = "accuracy";

/// Ordered layer list plus string metadata (architecture, dataset,
/// hyperparameters, recorded test accuracy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointModel {
    pub layers: Vec<LayerRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl CheckpointModel {
    pub fn new(layers: Vec<LayerRecord>, metadata: BTreeMap<String, String>) -> Result<Self> {
        let model = Self { layers, metadata };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CheckpointError::InvalidModel("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.layer_index != i {
                return Err(CheckpointError::InvalidModel(format!(
                    "layer at position {i} carries index {}",
                    l.layer_index
                )));
            }
            l.validate()?;
        }
        if let Some(raw) = self.metadata.get(META_ACCURACY) {
            match raw.parse::<f64>() {
                Ok(y) if (0.0..=1.0).contains(&y) => {}
                _ => return Err(CheckpointError::InvalidModel(format!("accuracy {raw:?} outside [0, 1]"))),
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerRecord::num_params).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.metadata.get(META_ACCURACY).and_then(|s| s.parse().ok())
    }

    pub fn arch(&self) -> Option<&str> {
        self.metadata.get(META_ARCH).map(String::as_str)
    }

    pub fn dataset(&self) -> Option<&str> {
        self.metadata.get(META_DATASET).map(String::as_str)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, write_checkpoint(self))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_checkpoint(&std::fs::read(path)?)
    }
}
