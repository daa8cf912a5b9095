//! Plain-text export with the same content as the binary container:
//!
//! ```json
//! {
//!   "format": "sne-checkpoint",
//!   "version": 1,
//!   "metadata": { "arch": "arch1", "accuracy": "0.83" },
//!   "layers": [
//!     { "layer_index": 0, "kind": "conv2d", "shape": [16, 1, 3, 3],
//!       "weights": [ ... ], "bias": [ ... ] }
//!   ]
//! }
//! ```
//!
//! `bias` is `null` for bias-free layers. Floats round-trip exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CheckpointError, CheckpointModel, LayerRecord, Result, VERSION};

pub const JSON_FORMAT: &str = "sne-checkpoint";

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    format: String,
    version: u32,
    metadata: BTreeMap<String, String>,
    layers: Vec<LayerRecord>,
}

pub fn to_json(model: &CheckpointModel) -> String {
    let doc = JsonCheckpoint {
        format: JSON_FORMAT.into(),
        version: VERSION,
        metadata: model.metadata.clone(),
        layers: model.layers.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<CheckpointModel> {
    let doc: JsonCheckpoint = serde_json::from_str(text)?;
    if doc.format != JSON_FORMAT {
        return Err(CheckpointError::InvalidModel(format!("format {:?}", doc.format)));
    }
    if doc.version != VERSION {
        return Err(CheckpointError::BadVersion {
            found: doc.version,
            expected: VERSION,
        });
    }
    CheckpointModel::new(doc.layers, doc.metadata)
}
