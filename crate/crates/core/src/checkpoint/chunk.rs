use serde::{Deserialize, Serialize};

use super::{CheckpointError, LayerKind, LayerRecord, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Weights,
    Bias,
}

impl Stream {
    /// Row of the learned stream-identity embedding.
    pub fn index(self) -> usize {
        match self {
            Stream::Weights => 0,
            Stream::Bias => 1,
        }
    }
}

/// Splits one parameter stream into vectors.
///
/// Linear weights give one vector of length `out * in`; conv weights give
/// `out * in` vectors of length `k * k`; a bias gives one vector of length `out`.
pub fn flatten(layer: &LayerRecord, stream: Stream) -> Result<Vec<Vec<f64>>> {
    let widen = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
    match stream {
        Stream::Bias => layer
            .bias
            .as_deref()
            .map(|b| vec![widen(b)])
            .ok_or(CheckpointError::MissingStream {
                layer: layer.layer_index,
                stream,
            }),
        Stream::Weights => Ok(match layer.kind {
            LayerKind::Linear => vec![widen(&layer.weights)],
            LayerKind::Conv2d => {
                let k = layer.kernel();
                layer.weights.chunks(k * k).map(widen).collect()
            }
        }),
    }
}

/// Length-`c` chunks gathered from independently padded vectors, with masks
/// (`true` = real value) and the source lengths needed to invert the padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSet {
    pub c: usize,
    pub chunks: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl ChunkSet {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Zero-pads each vector to a multiple of `c` and splits it into chunks.
pub fn pad_chunk(vectors: &[Vec<f64>], c: usize) -> Result<ChunkSet> {
    if c == 0 {
        return Err(CheckpointError::InvalidModel("chunk size must be at least 1".into()));
    }
    let mut set = ChunkSet {
        c,
        chunks: Vec::new(),
        masks: Vec::new(),
        lengths: Vec::with_capacity(vectors.len()),
    };
    for v in vectors {
        set.lengths.push(v.len());
        for piece in v.chunks(c) {
            let mut chunk = piece.to_vec();
            chunk.resize(c, 0.0);
            let mut mask = vec![true; piece.len()];
            mask.resize(c, false);
            set.chunks.push(chunk);
            set.masks.push(mask);
        }
    }
    Ok(set)
}

/// Inverse of [`pad_chunk`]: drops masked entries and regroups by source vector.
pub fn unpad(set: &ChunkSet) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(set.lengths.len());
    let mut chunks = set.chunks.iter().zip(&set.masks);
    for &len in &set.lengths {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len.div_ceil(set.c) {
            let (chunk, mask) = chunks.next().expect("chunk count matches lengths");
            v.extend(chunk.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| *x));
        }
        out.push(v);
    }
    out
}

/// Chunks of one stream of one layer, tagged with their source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkedLayer {
    pub kind: LayerKind,
    pub layer_index: usize,
    pub stream: Stream,
    pub set: ChunkSet,
}

pub fn chunk_layer(layer: &LayerRecord, stream: Stream, c: usize) -> Result<ChunkedLayer> {
    Ok(ChunkedLayer {
        kind: layer.kind,
        layer_index: layer.layer_index,
        stream,
        set: pad_chunk(&flatten(layer, stream)?, c)?,
    })
}
