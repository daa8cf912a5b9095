//! The two small CNN families trained in the zoos.
//!
//! Arch1: three 3×3 convolutions with 16 filters, global average pooling and
//! a 16→10 linear layer. Arch2: 5×5 conv (8), max-pool, 5×5 conv (6),
//! max-pool, 2×2 conv (4), flatten to 36, linear 36→20, linear 20→10.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointModel, LayerKind, LayerRecord, META_ARCH};
use crate::error::{validation, Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchId {
    Arch1,
    Arch2,
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchId::Arch1 => "arch1",
            ArchId::Arch2 => "arch2",
        })
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arch1" => Ok(ArchId::Arch1),
            "arch2" => Ok(ArchId::Arch2),
            _ => Err(validation(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Relu => g.relu(x)?,
            Activation::Tanh => g.tanh(x)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Normal,
    /// Uniform with the same standard deviation as the normal scheme.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Init {
    pub scheme: InitScheme,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TLayer {
    kind: LayerKind,
    shape: Vec<usize>,
    weight: ParamId,
    bias: ParamId,
}

/// A trainee network: layer handles into its own [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraineeNet {
    pub arch: ArchId,
    /// Input `[channels, size, size]`.
    pub input: [usize; 3],
    layers: Vec<TLayer>,
}

/// Layer shapes (weight shape per layer) for an architecture and input shape.
pub fn arch_layers(arch: ArchId, input: [usize; 3]) -> Result<Vec<(LayerKind, Vec<usize>)>> {
    let [c, h, w] = input;
    if h != w {
        return Err(validation(format!("square images required, got {h}×{w}")));
    }
    match arch {
        ArchId::Arch1 => {
            if h < 7 {
                return Err(validation(format!("arch1 needs images of at least 7×7, got {h}")));
            }
            Ok(vec![
                (LayerKind::Conv2d, vec![16, c, 3, 3]),
                (LayerKind::Conv2d, vec![16, 16, 3, 3]),
                (LayerKind::Conv2d, vec![16, 16, 3, 3]),
                (LayerKind::Linear, vec![10, 16]),
            ])
        }
        ArchId::Arch2 => {
            // 28 -> conv5 24 -> pool 12 -> conv5 8 -> pool 4 -> conv2 3; 4·3·3 = 36
            let after = ((h.saturating_sub(4) / 2).saturating_sub(4) / 2).saturating_sub(1);
            if 4 * after * after != 36 {
                return Err(validation(format!("arch2 needs 28×28 inputs (flatten size 36), got {h}×{h}")));
            }
            Ok(vec![
                (LayerKind::Conv2d, vec![8, c, 5, 5]),
                (LayerKind::Conv2d, vec![6, 8, 5, 5]),
                (LayerKind::Conv2d, vec![4, 6, 2, 2]),
                (LayerKind::Linear, vec![20, 36]),
                (LayerKind::Linear, vec![10, 20]),
            ])
        }
    }
}

/// Builds and initializes a trainee: weights from `init`, biases zero.
pub fn build_arch<R: Rng>(arch: ArchId, input: [usize; 3], init: Init, store: &mut ParamStore, rng: &mut R) -> Result<TraineeNet> {
    if !(init.std > 0.0 && init.std.is_finite()) {
        return Err(validation(format!("init std {} must be positive", init.std)));
    }
    let mut layers = Vec::new();
    for (i, (kind, shape)) in arch_layers(arch, input)?.into_iter().enumerate() {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init.scheme {
            InitScheme::Normal => {
                let d = Normal::new(0.0, init.std).expect("positive std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            InitScheme::Uniform => {
                let b = init.std * 3f64.sqrt();
                let d = Uniform::new_inclusive(-b, b);
                (0..n).map(|_| d.sample(rng)).collect()
            }
        };
        let weight = store.add(format!("layer{i}.weight"), Tensor::new(&shape, values)?);
        let bias = store.add(format!("layer{i}.bias"), Tensor::zeros(&[shape[0]]));
        layers.push(TLayer {
            kind,
            shape,
            weight,
            bias,
        });
    }
    Ok(TraineeNet { arch, input, layers })
}

/// Inverted dropout applied during training.
pub struct Dropout<'r, R: Rng> {
    pub rate: f64,
    pub rng: &'r mut R,
}

fn dropout<R: Rng>(g: &mut Graph, x: Var, drop: &mut Option<Dropout<'_, R>>) -> Result<Var> {
    let Some(d) = drop.as_mut() else { return Ok(x) };
    if d.rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - d.rate;
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if d.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = g.constant(Tensor::new(&shape, mask)?)?;
    Ok(g.mul(x, m)?)
}

impl TraineeNet {
    fn linear(&self, g: &mut Graph, l: &TLayer, x: Var) -> Result<Var> {
        let w = g.param(l.weight);
        let wt = g.transpose(w)?;
        let b = g.param(l.bias);
        let y = g.matmul(x, wt)?;
        Ok(g.add_bcast(y, b)?)
    }

    fn conv(&self, g: &mut Graph, l: &TLayer, x: Var) -> Result<Var> {
        let w = g.param(l.weight);
        let b = g.param(l.bias);
        Ok(g.conv2d(x, w, Some(b))?)
    }

    /// Logits `[B, 10]` for images `[B, C, H, W]`.
    pub fn forward<R: Rng>(&self, g: &mut Graph, x: Var, act: Activation, mut drop: Option<Dropout<'_, R>>) -> Result<Var> {
        let l = &self.layers;
        match self.arch {
            ArchId::Arch1 => {
                let mut h = x;
                for layer in &l[..3] {
                    h = self.conv(g, layer, h)?;
                    h = act.apply(g, h)?;
                }
                let h = g.global_avg_pool(h)?;
                let h = dropout(g, h, &mut drop)?;
                self.linear(g, &l[3], h)
            }
            ArchId::Arch2 => {
                let mut h = self.conv(g, &l[0], x)?;
                h = g.max_pool2d(h)?;
                h = act.apply(g, h)?;
                h = self.conv(g, &l[1], h)?;
                h = g.max_pool2d(h)?;
                h = act.apply(g, h)?;
                h = self.conv(g, &l[2], h)?;
                h = act.apply(g, h)?;
                let batch = g.shape(h)[0];
                h = g.reshape(h, &[batch, 36])?;
                h = dropout(g, h, &mut drop)?;
                h = self.linear(g, &l[3], h)?;
                h = act.apply(g, h)?;
                h = dropout(g, h, &mut drop)?;
                self.linear(g, &l[4], h)
            }
        }
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    /// Snapshot as a checkpoint (float32 storage).
    pub fn to_checkpoint(&self, store: &ParamStore, mut metadata: BTreeMap<String, String>) -> Result<CheckpointModel> {
        let narrow = |t: &Tensor| t.data().iter().map(|&v| v as f32).collect::<Vec<f32>>();
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                LayerRecord::new(
                    l.kind,
                    l.shape.clone(),
                    narrow(store.get(l.weight)),
                    Some(narrow(store.get(l.bias))),
                    i,
                )
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        metadata.insert(META_ARCH.into(), self.arch.to_string());
        Ok(CheckpointModel::new(layers, metadata)?)
    }
}
