//! Cross-dataset and cross-architecture evaluation matrices.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointModel;
use crate::error::{validation, Error, Result};
use crate::kendall::kendall_tau;
use crate::train::{load_artifact, Predictor, TrainedOn, Trainer};
use crate::zoo::{SplitTag, Zoo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    CrossDataset,
    CrossArchitecture,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::CrossDataset => "cross-dataset",
            EvalMode::CrossArchitecture => "cross-architecture",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-dataset" => Ok(EvalMode::CrossDataset),
            "cross-architecture" => Ok(EvalMode::CrossArchitecture),
            _ => Err(validation(format!("unknown mode '{s}' (cross-dataset or cross-architecture)"))),
        }
    }
}

/// A predictor with the best-validation parameters and its training provenance.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub predictor: Predictor,
    pub trained_on: TrainedOn,
}

impl TrainedPredictor {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            predictor: t.best_predictor(),
            trained_on: t.trained_on.clone(),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(Self::from_trainer(&load_artifact(path)?))
    }

    pub fn method(&self) -> String {
        self.predictor.config.encoder.to_string()
    }

    /// τ on one split of `zoo`. Splits used for this predictor's training or
    /// model selection are refused.
    pub fn evaluate(&self, zoo: &Zoo, split: SplitTag) -> Result<f64> {
        let members = zoo.members(split);
        if zoo.name() == self.trained_on.zoo {
            let used: BTreeSet<usize> = self
                .trained_on
                .train_ids
                .iter()
                .chain(&self.trained_on.val_ids)
                .copied()
                .collect();
            if members.iter().any(|m| used.contains(&m.id)) {
                return Err(validation(format!(
                    "refusing to evaluate on {split:?} split of '{}': it overlaps the predictor's training data",
                    zoo.name()
                )));
            }
        }
        let models: Vec<&CheckpointModel> = members.iter().map(|m| m.model).collect();
        let ys: Vec<f64> = members.iter().map(|m| m.accuracy).collect();
        let preds = self.predictor.predict_all(&models)?;
        Ok(kendall_tau(&preds, &ys)?)
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub source: String,
    pub target: String,
    /// One τ per seed.
    pub taus: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Networks in the target test split.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub method: String,
    /// Config fingerprints of every evaluated predictor, deduplicated.
    pub fingerprints: Vec<String>,
    pub cells: Vec<Cell>,
    /// Per seed, τ averaged over all cells; then mean and std over seeds.
    pub average: Cell,
    pub timing: Timing,
}

impl EvalReport {
    pub fn cell(&self, source: &str, target: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.source == source && c.target == target)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,method,tau_mean,tau_std,n,seeds\n");
        for c in self.cells.iter().chain(std::iter::once(&self.average)) {
            let pair = if c.target == "average" {
                "average".to_string()
            } else {
                format!("{}->{}", c.source, c.target)
            };
            s.push_str(&format!("{pair},{},{},{},{},{}\n", self.method, c.mean, c.std, c.n, c.taus.len()));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with the timing section removed, for comparing reruns.
    pub fn to_json_without_timing(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Evaluates every source group (one predictor per seed, all trained on the
/// same zoo) on every target zoo's test split.
pub fn cross_eval(sources: &[Vec<TrainedPredictor>], targets: &[&Zoo], mode: EvalMode) -> Result<EvalReport> {
    let start = Instant::now();
    let first = sources
        .first()
        .and_then(|g| g.first())
        .ok_or_else(|| validation("cross evaluation needs at least one trained predictor"))?;
    if targets.is_empty() {
        return Err(validation("cross evaluation needs at least one target zoo"));
    }
    let method = first.method();
    let seeds = sources[0].len();
    for group in sources {
        let zoo = &group.first().ok_or_else(|| validation("empty source group"))?.trained_on.zoo;
        if group.len() != seeds {
            return Err(validation("every source needs the same number of seeds"));
        }
        for p in group {
            if &p.trained_on.zoo != zoo {
                return Err(validation("a source group mixes predictors trained on different zoos"));
            }
            if p.method() != method {
                return Err(validation("all predictors in one report must use the same encoder"));
            }
            if mode == EvalMode::CrossArchitecture && !p.predictor.is_architecture_agnostic() {
                return Err(Error::Capability(format!(
                    "the {} encoder is tied to one architecture and cannot be evaluated across architectures",
                    p.method()
                )));
            }
        }
    }
    for t in targets {
        let target_arch = t.spec.arch.to_string();
        for p in sources.iter().flatten() {
            let source_arch = p.trained_on.arch.as_deref();
            match mode {
                EvalMode::CrossArchitecture if source_arch == Some(target_arch.as_str()) => {
                    return Err(validation(format!(
                        "target '{}' is {target_arch}, which the predictor was trained on",
                        t.name()
                    )));
                }
                EvalMode::CrossDataset if source_arch.is_some_and(|a| a != target_arch) => {
                    return Err(validation(format!(
                        "target '{}' is {target_arch} but the predictor was trained on {}; use cross-architecture mode",
                        t.name(),
                        source_arch.unwrap_or("?")
                    )));
                }
                _ => {}
            }
        }
    }

    let mut cells = Vec::new();
    let mut per_seed = vec![Vec::new(); seeds];
    for group in sources {
        for t in targets {
            let taus = group
                .iter()
                .map(|p| p.evaluate(t, SplitTag::Test))
                .collect::<Result<Vec<_>>>()?;
            for (s, &tau) in taus.iter().enumerate() {
                per_seed[s].push(tau);
            }
            let (mean, std) = mean_std(&taus);
            cells.push(Cell {
                source: group[0].trained_on.zoo.clone(),
                target: t.name().to_string(),
                taus,
                mean,
                std,
                n: t.members(SplitTag::Test).len(),
            });
        }
    }
    let seed_avgs: Vec<f64> = per_seed.iter().map(|v| mean_std(v).0).collect();
    let (mean, std) = mean_std(&seed_avgs);
    let average = Cell {
        source: "all".into(),
        target: "average".into(),
        taus: seed_avgs,
        mean,
        std,
        n: cells.len(),
    };
    let fingerprints: BTreeSet<String> = sources.iter().flatten().map(|p| p.predictor.config.fingerprint()).collect();
    Ok(EvalReport {
        mode,
        method,
        fingerprints: fingerprints.into_iter().collect(),
        cells,
        average,
        timing: Timing {
            seconds: start.elapsed().as_secs_f64(),
        },
    })
}
