//! The set-based network encoder: chunk encoder, layer-stream encoder,
//! separated layer encoder and network encoder.
//!
//! All chunks of one stream are pushed through the chunk encoder as a single
//! `[q, c, h]` batch; each chunk is still its own set, so the result is the
//! same as encoding them one at a time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{chunk_layer, pad_chunk, CheckpointModel, ChunkSet, ChunkedLayer, LayerKind, Stream};
use crate::error::{validation, Result};
use crate::set_blocks::{pma, pos_encode, stack_set, BlockConfig, Linear, PmaParams, PosEncKind, PosEncTable, SabStack};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SneConfig {
    /// Width `h` inside the SAB stacks.
    pub hidden: usize,
    /// Final encoding width `H`.
    pub encoding: usize,
    pub chunk_size: usize,
    pub heads: usize,
    /// SAB blocks in each of the four set-to-set stacks.
    pub sab_blocks: usize,
    pub use_layer_norm: bool,
    pub type_pe: bool,
    pub level_pe: bool,
    /// Zero the lifted rows of padded chunk entries before the first stack.
    pub mask_padding: bool,
    /// Largest layer level the level table accepts.
    pub max_level: usize,
}

impl Default for SneConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            encoding: 1024,
            chunk_size: 32,
            heads: 4,
            sab_blocks: 2,
            use_layer_norm: false,
            type_pe: true,
            level_pe: true,
            mask_padding: false,
            max_level: 64,
        }
    }
}

impl SneConfig {
    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            width: self.hidden,
            heads: self.heads,
            use_layer_norm: self.use_layer_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block().validate()?;
        if self.encoding == 0 || self.chunk_size == 0 || self.sab_blocks == 0 {
            return Err(validation("encoding size, chunk size and SAB block count must be positive"));
        }
        Ok(())
    }
}

/// Handles to every learnable tensor of the encoder inside a [`ParamStore`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SneParams {
    pub config: SneConfig,
    /// Scalar lift `1 -> h` applied to every chunk entry.
    pub lift: Linear,
    pub phi1: SabStack,
    pub phi2: SabStack,
    pub phi3: SabStack,
    pub phi4: SabStack,
    pub gamma_alpha: PmaParams,
    pub gamma_beta: PmaParams,
    pub gamma_gamma: PmaParams,
    pub sep_stack: SabStack,
    pub sep_pool: PmaParams,
    /// `[2, h]` stream identity rows (weights, bias).
    pub stream_embed: ParamId,
    /// `h -> H`, absent when the widths agree.
    pub out_lift: Option<Linear>,
    pub type_table: PosEncTable,
    pub level_table: PosEncTable,
    /// Fixed divisors for weight and bias values before the lift.
    pub input_scale: [f64; 2],
}

impl SneParams {
    pub fn new<R: Rng>(store: &mut ParamStore, config: SneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (h, b, d) = (config.hidden, config.block(), config.sab_blocks);
        Ok(Self {
            lift: Linear::new(store, "sne.lift", 1, h, rng),
            phi1: SabStack::new(store, "sne.phi1", b, d, rng)?,
            phi2: SabStack::new(store, "sne.phi2", b, d, rng)?,
            phi3: SabStack::new(store, "sne.phi3", b, d, rng)?,
            phi4: SabStack::new(store, "sne.phi4", b, d, rng)?,
            gamma_alpha: PmaParams::new(store, "sne.gamma_alpha", b, rng)?,
            gamma_beta: PmaParams::new(store, "sne.gamma_beta", b, rng)?,
            gamma_gamma: PmaParams::new(store, "sne.gamma_gamma", b, rng)?,
            sep_stack: SabStack::new(store, "sne.sep", b, 2, rng)?,
            sep_pool: PmaParams::new(store, "sne.sep_pool", b, rng)?,
            stream_embed: store.add_normal("sne.stream_embed", &[2, h], 1.0 / (h as f64).sqrt(), rng),
            out_lift: (config.encoding != h).then(|| Linear::new(store, "sne.out_lift", h, config.encoding, rng)),
            type_table: PosEncTable::new(PosEncKind::LayerType, LayerKind::ALL.len() - 1, h),
            level_table: PosEncTable::new(PosEncKind::LayerLevel, config.max_level, h),
            input_scale: [1.0, 1.0],
            config,
        })
    }

    /// Output width `H`.
    pub fn width(&self) -> usize {
        self.config.encoding
    }

    /// Encodes `model` into a plain vector of length `H`.
    pub fn encode(&self, store: &ParamStore, model: &CheckpointModel) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let z = encode_network(&mut g, self, model)?;
        Ok(g.value(z).data().to_vec())
    }
}

/// Root mean square of all weight values and of all bias values across
/// `models`; 1.0 for a stream that is absent or all zero.
pub fn fit_input_scale<'a>(models: impl IntoIterator<Item = &'a CheckpointModel>) -> [f64; 2] {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for m in models {
        for l in &m.layers {
            sums[0] += l.weights.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>();
            counts[0] += l.weights.len();
            if let Some(b) = &l.bias {
                sums[1] += b.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>();
                counts[1] += b.len();
            }
        }
    }
    [0, 1].map(|i| {
        let rms = (sums[i] / counts[i].max(1) as f64).sqrt();
        if rms > 0.0 && rms.is_finite() {
            rms
        } else {
            1.0
        }
    })
}

/// Chunk encoder over a batch of chunks: `[q, c]` values -> `[q, h]`.
fn encode_chunk_batch(
    g: &mut Graph,
    p: &SneParams,
    set: &ChunkSet,
    stream: Stream,
    kind: LayerKind,
    level: usize,
) -> Result<Var> {
    let (q, c, h) = (set.len(), set.c, p.config.hidden);
    if q == 0 {
        return Err(validation("empty chunk set"));
    }
    if c != p.config.chunk_size {
        return Err(validation(format!("chunk length {c} != configured chunk size {}", p.config.chunk_size)));
    }
    let scale = p.input_scale[stream.index()];
    let flat: Vec<f64> = set.chunks.iter().flatten().map(|v| v / scale).collect();
    let values = g.constant(Tensor::new(&[q, c, 1], flat)?)?;
    let mut x = p.lift.forward(g, values)?;
    if p.config.mask_padding {
        let mask: Vec<f64> = set.masks.iter().flatten().map(|&m| f64::from(u8::from(m))).collect();
        let mask = g.constant(Tensor::new(&[q, c, 1], mask)?)?;
        x = g.mul_bcast(x, mask)?;
    }
    x = p.phi1.forward(g, x)?;
    if p.config.type_pe {
        x = pos_encode(g, x, kind.type_index(), &p.type_table)?;
    }
    if p.config.level_pe {
        x = pos_encode(g, x, level, &p.level_table)?;
    }
    x = p.phi2.forward(g, x)?;
    let pooled = pma(g, x, &p.gamma_alpha)?;
    Ok(g.reshape(pooled, &[q, h])?)
}

/// Encodes a single length-`c` weight chunk to `[1, h]`.
pub fn encode_chunk(g: &mut Graph, p: &SneParams, chunk: &[f64], kind: LayerKind, level: usize) -> Result<Var> {
    if chunk.len() != p.config.chunk_size {
        return Err(validation(format!(
            "chunk length {} != configured chunk size {}",
            chunk.len(),
            p.config.chunk_size
        )));
    }
    let set = pad_chunk(&[chunk.to_vec()], chunk.len())?;
    encode_chunk_batch(g, p, &set, Stream::Weights, kind, level)
}

/// Encodes every chunk of one stream, then pools the chunk set to `[1, h]`.
pub fn encode_layer_stream(g: &mut Graph, p: &SneParams, chunked: &ChunkedLayer) -> Result<Var> {
    let x = encode_chunk_batch(g, p, &chunked.set, chunked.stream, chunked.kind, chunked.layer_index)?;
    let mut x = p.phi3.forward(g, x)?;
    if p.config.level_pe {
        x = pos_encode(g, x, chunked.layer_index, &p.level_table)?;
    }
    Ok(pma(g, x, &p.gamma_beta)?)
}

/// Separated layer encoder: combines the weight and optional bias encodings
/// (each `[1, h]`, stream identity already added) into one `[1, h]` vector.
pub fn encode_layer(g: &mut Graph, p: &SneParams, weights_enc: Var, bias_enc: Option<Var>) -> Result<Var> {
    let rows: Vec<Var> = std::iter::once(weights_enc).chain(bias_enc).collect();
    let set = stack_set(g, &rows)?;
    let x = p.sep_stack.forward(g, set)?;
    Ok(pma(g, x, &p.sep_pool)?)
}

fn with_stream_identity(g: &mut Graph, p: &SneParams, enc: Var, stream: Stream) -> Result<Var> {
    let table = g.param(p.stream_embed);
    let row = g.narrow(table, 0, stream.index(), 1)?;
    Ok(g.add(enc, row)?)
}

/// Full pipeline: `model -> [1, H]`.
pub fn encode_network(g: &mut Graph, p: &SneParams, model: &CheckpointModel) -> Result<Var> {
    if model.layers.is_empty() {
        return Err(validation("cannot encode a model without layers"));
    }
    let c = p.config.chunk_size;
    let mut layer_vecs = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let w = encode_layer_stream(g, p, &chunk_layer(layer, Stream::Weights, c)?)?;
        let w = with_stream_identity(g, p, w, Stream::Weights)?;
        let b = match layer.bias {
            Some(_) => {
                let b = encode_layer_stream(g, p, &chunk_layer(layer, Stream::Bias, c)?)?;
                Some(with_stream_identity(g, p, b, Stream::Bias)?)
            }
            None => None,
        };
        layer_vecs.push(encode_layer(g, p, w, b)?);
    }
    let mut x = stack_set(g, &layer_vecs)?;
    if p.config.level_pe {
        let rows = (0..model.layers.len())
            .map(|i| p.level_table.row(i))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let pe = g.constant(Tensor::from_rows(&rows)?)?;
        x = g.add(x, pe)?;
    }
    x = p.phi4.forward(g, x)?;
    let z = pma(g, x, &p.gamma_gamma)?;
    match &p.out_lift {
        Some(lift) => Ok(lift.forward(g, z)?),
        None => Ok(z),
    }
}
