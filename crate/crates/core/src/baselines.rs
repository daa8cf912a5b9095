//! Architecture-locked comparison encoders: per-layer statistics (STATNN) and
//! the flattened parameter vector (MLP). Both feed the same predictor head.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointModel, LayerKind};
use crate::error::{validation, Error, Result};

pub const STATS_PER_STREAM: usize = 7;
pub const QUANTILES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Mean, population variance, then the five quantiles (linear interpolation).
pub fn summary_stats(values: &[f64]) -> [f64; STATS_PER_STREAM] {
    // sums run over the sorted values so the result ignores input order exactly
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut out = [mean, var, 0.0, 0.0, 0.0, 0.0, 0.0];
    for (slot, q) in out[2..].iter_mut().zip(QUANTILES) {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        *slot = sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
    }
    out
}

/// Per layer, weights then bias, 7 statistics each. A missing bias stream
/// contributes zeros so the layout stays `layers * 2 * 7`.
pub fn statnn_features(model: &CheckpointModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.layers.len() * 2 * STATS_PER_STREAM);
    for l in &model.layers {
        let w: Vec<f64> = l.weights.iter().map(|&v| f64::from(v)).collect();
        out.extend(summary_stats(&w));
        match &l.bias {
            Some(b) => out.extend(summary_stats(&b.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())),
            None => out.extend([0.0; STATS_PER_STREAM]),
        }
    }
    out
}

/// Weights and bias of every layer concatenated in layer order.
pub fn mlp_flatten_features(model: &CheckpointModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.num_params());
    for l in &model.layers {
        out.extend(l.weights.iter().map(|&v| f64::from(v)));
        out.extend(l.bias.iter().flatten().map(|&v| f64::from(v)));
    }
    out
}

/// Layer kinds, shapes and bias presence: what an architecture-locked encoder was fitted to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSignature(pub Vec<(LayerKind, Vec<usize>, bool)>);

impl ArchSignature {
    pub fn of(model: &CheckpointModel) -> Self {
        Self(
            model
                .layers
                .iter()
                .map(|l| (l.kind, l.shape.clone(), l.bias.is_some()))
                .collect(),
        )
    }
}

impl std::fmt::Display for ArchSignature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(k, s, _)| format!("{k:?}{s:?}"))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Mlp,
    Statnn,
}

impl BaselineKind {
    pub fn raw_features(self, model: &CheckpointModel) -> Vec<f64> {
        match self {
            BaselineKind::Mlp => mlp_flatten_features(model),
            BaselineKind::Statnn => statnn_features(model),
        }
    }
}

/// A baseline feature map locked to one architecture, with per-feature
/// standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBaseline {
    pub kind: BaselineKind,
    pub signature: ArchSignature,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureBaseline {
    pub fn fit(kind: BaselineKind, train: &[&CheckpointModel]) -> Result<Self> {
        let first = train.first().ok_or_else(|| validation("cannot fit a baseline on zero models"))?;
        let signature = ArchSignature::of(first);
        let feats = train
            .iter()
            .map(|m| {
                check_signature(kind, &signature, m)?;
                Ok(kind.raw_features(m))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = feats[0].len();
        let n = feats.len() as f64;
        let shift: Vec<f64> = (0..d).map(|j| feats.iter().map(|f| f[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = feats.iter().map(|f| (f[j] - shift[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            kind,
            signature,
            shift,
            scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.shift.len()
    }

    /// Standardized features; a capability error for any other architecture.
    pub fn features(&self, model: &CheckpointModel) -> Result<Vec<f64>> {
        check_signature(self.kind, &self.signature, model)?;
        Ok(self
            .kind
            .raw_features(model)
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

fn check_signature(kind: BaselineKind, expected: &ArchSignature, model: &CheckpointModel) -> Result<()> {
    let got = ArchSignature::of(model);
    if &got != expected {
        return Err(Error::Capability(format!(
            "{kind:?} baseline is locked to [{expected}] and cannot encode [{got}]"
        )));
    }
    Ok(())
}
