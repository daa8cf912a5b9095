//! Attention-based set functions: multi-head attention, MAB, SAB, PMA and the
//! sinusoidal positional tables used to inject layer type and layer level.
//!
//! Sets are `[n, h]` matrices or batches of sets `[B, n, h]`. Every block
//! preserves the batch layout of its input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, ParamId, ParamStore, Result, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x · W + b` over the last axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weight Uniform(±√(3/fan_in)), which keeps activation variance across
    /// the layer; bias Uniform(±1/√fan_in).
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], 3f64.sqrt() * bound, rng),
            bias: store.add_uniform(format!("{name}.bias"), &[fan_out], bound, rng),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_bcast(y, b)
    }
}

/// Row-wise feed-forward: affine, ReLU, affine (hidden width = model width).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowFf {
    pub inner: Linear,
    pub outer: Linear,
}

impl RowFf {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, rng: &mut R) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.0"), width, width, rng),
            outer: Linear::new(store, &format!("{name}.1"), width, width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h)?;
        self.outer.forward(g, h)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[width])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub width: usize,
    pub heads: usize,
    pub use_layer_norm: bool,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(TensorError::Invalid {
                op: "block_config",
                msg: format!("width {} must be a positive multiple of head count {}", self.width, self.heads),
            });
        }
        Ok(())
    }
}

/// Multihead Attention Block parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MabParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ff: RowFf,
    pub norm_attn: Option<LayerNormParams>,
    pub norm_ff: Option<LayerNormParams>,
    pub heads: usize,
    pub width: usize,
}

impl MabParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: BlockConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.width;
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), h, h, rng),
            key: Linear::new(store, &format!("{name}.k"), h, h, rng),
            value: Linear::new(store, &format!("{name}.v"), h, h, rng),
            output: Linear::new(store, &format!("{name}.o"), h, h, rng),
            ff: RowFf::new(store, &format!("{name}.ff"), h, rng),
            norm_attn: cfg
                .use_layer_norm
                .then(|| LayerNormParams::new(store, &format!("{name}.ln0"), h)),
            norm_ff: cfg
                .use_layer_norm
                .then(|| LayerNormParams::new(store, &format!("{name}.ln1"), h)),
            heads: cfg.heads,
            width: h,
        })
    }
}

/// Lifts `[n, h]` to `[1, n, h]`; returns whether the input was unbatched.
fn as_batched(g: &mut Graph, x: Var, width: usize) -> Result<(Var, bool)> {
    let s = g.shape(x).to_vec();
    match s.as_slice() {
        [n, h] if *h == width => Ok((g.reshape(x, &[1, *n, *h])?, true)),
        [_, _, h] if *h == width => Ok((x, false)),
        _ => Err(TensorError::Shape {
            op: "set_block",
            lhs: s,
            rhs: vec![width],
        }),
    }
}

fn unbatch(g: &mut Graph, x: Var, was_2d: bool) -> Result<Var> {
    if was_2d {
        let s = g.shape(x).to_vec();
        g.reshape(x, &s[1..])
    } else {
        Ok(x)
    }
}

fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, n, h) = (s[0], s[1], s[2]);
    let d = h / heads;
    let x = g.reshape(x, &[b, n, heads, d])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[b * heads, n, d])
}

fn merge_heads(g: &mut Graph, x: Var, batch: usize, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (n, d) = (s[1], s[2]);
    let x = g.reshape(x, &[batch, heads, n, d])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[batch, n, heads * d])
}

/// Scaled dot-product attention with queries from `x` and keys/values from `y`,
/// heads concatenated and projected. `x[B, n_x, h]`, `y[B, n_y, h]` -> `[B, n_x, h]`.
fn multihead3(g: &mut Graph, x: Var, y: Var, p: &MabParams) -> Result<Var> {
    let (bx, by) = (g.shape(x)[0], g.shape(y)[0]);
    if bx != by {
        return Err(TensorError::Shape {
            op: "multihead",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(y).to_vec(),
        });
    }
    let q = p.query.forward(g, x)?;
    let k = p.key.forward(g, y)?;
    let v = p.value.forward(g, y)?;
    let q = split_heads(g, q, p.heads)?;
    let k = split_heads(g, k, p.heads)?;
    let v = split_heads(g, v, p.heads)?;
    let kt = g.transpose(k)?;
    let scores = g.bmm(q, kt)?;
    let d = (p.width / p.heads) as f64;
    let scores = g.scale(scores, 1.0 / d.sqrt())?;
    let attn = g.softmax(scores)?;
    let o = g.bmm(attn, v)?;
    let o = merge_heads(g, o, bx, p.heads)?;
    p.output.forward(g, o)
}

pub fn multihead(g: &mut Graph, x: Var, y: Var, p: &MabParams) -> Result<Var> {
    let (x3, flat) = as_batched(g, x, p.width)?;
    let (y3, _) = as_batched(g, y, p.width)?;
    let out = multihead3(g, x3, y3, p)?;
    unbatch(g, out, flat)
}

/// `H = LN(X + MultiHead(X, Y, Y))`, `MAB(X, Y) = LN(H + rFF(H))`; the layer
/// norms are identities when the block was built without them.
pub fn mab(g: &mut Graph, x: Var, y: Var, p: &MabParams) -> Result<Var> {
    let (x3, flat) = as_batched(g, x, p.width)?;
    let (y3, _) = as_batched(g, y, p.width)?;
    let att = multihead3(g, x3, y3, p)?;
    let mut h = g.add(x3, att)?;
    if let Some(ln) = &p.norm_attn {
        h = ln.forward(g, h)?;
    }
    let ff = p.ff.forward(g, h)?;
    let mut out = g.add(h, ff)?;
    if let Some(ln) = &p.norm_ff {
        out = ln.forward(g, out)?;
    }
    unbatch(g, out, flat)
}

pub fn sab(g: &mut Graph, x: Var, p: &MabParams) -> Result<Var> {
    mab(g, x, x, p)
}

/// Stack of self-attention blocks applied in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SabStack {
    pub blocks: Vec<MabParams>,
}

impl SabStack {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: BlockConfig, depth: usize, rng: &mut R) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| MabParams::new(store, &format!("{name}.sab{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = sab(g, x, b)?;
        }
        Ok(x)
    }
}

/// Pooling by multihead attention with a single learned seed vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmaParams {
    /// `[k, h]` seed matrix; `k = 1`.
    pub seed: ParamId,
    pub ff_in: RowFf,
    pub mab: MabParams,
}

impl PmaParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: BlockConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let std = 1.0 / (cfg.width as f64).sqrt();
        Ok(Self {
            seed: store.add_normal(format!("{name}.seed"), &[1, cfg.width], std, rng),
            ff_in: RowFf::new(store, &format!("{name}.ff_in"), cfg.width, rng),
            mab: MabParams::new(store, &format!("{name}.mab"), cfg, rng)?,
        })
    }
}

/// `PMA(X) = MAB(S, rFF(X))`: `[n, h] -> [1, h]` or `[B, n, h] -> [B, 1, h]`.
pub fn pma(g: &mut Graph, x: Var, p: &PmaParams) -> Result<Var> {
    let (x3, flat) = as_batched(g, x, p.mab.width)?;
    let batch = g.shape(x3)[0];
    let h = p.mab.width;
    let zeros = g.constant(Tensor::zeros(&[batch, 1, h]))?;
    let seed = g.param(p.seed);
    let s = g.add_bcast(zeros, seed)?;
    let fx = p.ff_in.forward(g, x3)?;
    let out = mab(g, s, fx, &p.mab)?;
    unbatch(g, out, flat)
}

/// Stacks `[1, h]` (or `[h]`) rows into an `[n, h]` set.
pub fn stack_set(g: &mut Graph, rows: &[Var]) -> Result<Var> {
    if rows.is_empty() {
        return Err(TensorError::Invalid {
            op: "stack_set",
            msg: "empty set".into(),
        });
    }
    let mut flat = Vec::with_capacity(rows.len());
    for &r in rows {
        let n = g.value(r).numel();
        flat.push(g.reshape(r, &[1, n])?);
    }
    g.concat(&flat, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosEncKind {
    LayerType,
    LayerLevel,
}

/// Parameter-free sinusoidal table: row `p`, column `2i` is
/// `sin(p / 10000^(2i/h))` and column `2i+1` is the matching cosine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosEncTable {
    pub max_index: usize,
    pub width: usize,
    pub kind: PosEncKind,
}

impl PosEncTable {
    pub fn new(kind: PosEncKind, max_index: usize, width: usize) -> Self {
        Self { max_index, width, kind }
    }

    pub fn row(&self, index: usize) -> Result<Vec<f64>> {
        if index > self.max_index {
            return Err(TensorError::Invalid {
                op: "pos_encode",
                msg: format!("{:?} index {index} exceeds table maximum {}", self.kind, self.max_index),
            });
        }
        let h = self.width as f64;
        Ok((0..self.width)
            .map(|col| {
                let pair = (col / 2 * 2) as f64;
                let angle = index as f64 / 10000f64.powf(pair / h);
                if col % 2 == 0 {
                    angle.sin()
                } else {
                    angle.cos()
                }
            })
            .collect())
    }
}

/// Adds the table row for `index` to every row of `x` (last axis = table width).
pub fn pos_encode(g: &mut Graph, x: Var, index: usize, table: &PosEncTable) -> Result<Var> {
    let h = *g.shape(x).last().expect("non-empty shape");
    if h != table.width {
        return Err(TensorError::Shape {
            op: "pos_encode",
            lhs: g.shape(x).to_vec(),
            rhs: vec![table.width],
        });
    }
    let row = g.constant(Tensor::new(&[h], table.row(index)?)?)?;
    g.add_bcast(x, row)
}
