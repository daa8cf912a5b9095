//! Predictor head, joint encoder + head training, and prediction.

mod artifact;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, FeatureBaseline};
use crate::checkpoint::{CheckpointModel, META_ARCH};
use crate::config::{EncoderKind, RunConfig};
use crate::encoder::{encode_network, fit_input_scale, SneParams};
use crate::error::{validation, Error, Result};
use crate::kendall::kendall_tau;
use crate::set_blocks::Linear;
use crate::tensor::{adam_step, AdamConfig, AdamState, GradStore, Graph, MultistepSchedule, ParamId, ParamStore, Tensor, Var};
use crate::zoo::Member;

pub use artifact::{load_artifact, save_artifact, ARTIFACT_MAGIC};

/// Three affine layers: `in -> hidden -> hidden -> 1`, ReLU, ReLU, Sigmoid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Head {
    pub layers: [Linear; 3],
}

impl Head {
    pub fn new<R: rand::Rng>(store: &mut ParamStore, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Linear::new(store, "head.0", input, hidden, rng),
                Linear::new(store, "head.1", hidden, hidden, rng),
                Linear::new(store, "head.2", hidden, 1, rng),
            ],
        }
    }

    /// `[n, in] -> [n, 1]` in (0, 1).
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let [a, b, c] = &self.layers;
        let x = a.forward(g, x)?;
        let x = g.relu(x)?;
        let x = b.forward(g, x)?;
        let x = g.relu(x)?;
        let x = c.forward(g, x)?;
        Ok(g.sigmoid(x)?)
    }
}

#[derive(Debug, Clone)]
pub enum Encoder {
    Sne(Box<SneParams>),
    Baseline(FeatureBaseline),
}

/// Encoder plus head, with their parameters.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub config: RunConfig,
    pub encoder: Encoder,
    pub head: Head,
    pub store: ParamStore,
}

impl Predictor {
    /// Fresh parameters from `config.seed`. Baselines need their fitted
    /// feature map; SNE ignores `baseline`.
    pub fn build(config: &RunConfig, baseline: Option<FeatureBaseline>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (encoder, width) = match config.encoder {
            EncoderKind::Sne => {
                let p = SneParams::new(&mut store, config.sne(), &mut rng)?;
                let w = p.width();
                (Encoder::Sne(Box::new(p)), w)
            }
            kind => {
                let b = baseline.ok_or_else(|| validation(format!("{kind} encoder needs a fitted feature map")))?;
                let w = b.input_dim();
                (Encoder::Baseline(b), w)
            }
        };
        let head = Head::new(&mut store, width, config.head_hidden, &mut rng);
        Ok(Self {
            config: config.clone(),
            encoder,
            head,
            store,
        })
    }

    /// Builds a predictor for `config`, fitting baseline features on `train`.
    /// SNE input scales (when `input_norm` is on) are fitted on `train` too.
    pub fn for_training(config: &RunConfig, train: &[&CheckpointModel]) -> Result<Self> {
        let baseline = match config.encoder {
            EncoderKind::Sne => None,
            EncoderKind::Mlp => Some(FeatureBaseline::fit(BaselineKind::Mlp, train)?),
            EncoderKind::Statnn => Some(FeatureBaseline::fit(BaselineKind::Statnn, train)?),
        };
        let mut p = Self::build(config, baseline)?;
        if let (Encoder::Sne(sne), true) = (&mut p.encoder, config.input_norm) {
            sne.input_scale = fit_input_scale(train.iter().copied());
        }
        Ok(p)
    }

    pub fn input_scale(&self) -> Option<[f64; 2]> {
        match &self.encoder {
            Encoder::Sne(p) => Some(p.input_scale),
            Encoder::Baseline(_) => None,
        }
    }

    pub fn is_architecture_agnostic(&self) -> bool {
        matches!(self.encoder, Encoder::Sne(_))
    }

    /// Encoding of `model` as a graph node `[1, width]`.
    pub fn encode_var(&self, g: &mut Graph, model: &CheckpointModel) -> Result<Var> {
        match &self.encoder {
            Encoder::Sne(p) => encode_network(g, p, model),
            Encoder::Baseline(b) => {
                let f = b.features(model)?;
                let n = f.len();
                Ok(g.constant(Tensor::new(&[1, n], f)?)?)
            }
        }
    }

    pub fn encode(&self, model: &CheckpointModel) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let z = self.encode_var(&mut g, model)?;
        Ok(g.value(z).data().to_vec())
    }

    /// Predicted accuracy node `[1, 1]`.
    pub fn forward(&self, g: &mut Graph, model: &CheckpointModel) -> Result<Var> {
        let z = self.encode_var(g, model)?;
        self.head.forward(g, z)
    }

    pub fn predict(&self, model: &CheckpointModel) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let p = self.forward(&mut g, model)?;
        Ok(g.value(p).item())
    }

    /// Predictions in input order.
    pub fn predict_all(&self, models: &[&CheckpointModel]) -> Result<Vec<f64>> {
        models.par_iter().map(|m| self.predict(m)).collect()
    }

    fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.store.ids().filter(|&id| self.store.name(id).starts_with(prefix)).collect()
    }

    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("sne.")
    }

    pub fn head_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("head.")
    }
}

/// Mean BCE loss and parameter gradients over `batch`, each model weighted
/// `1 / batch.len()`. Models are processed in parallel and reduced in order.
pub fn batch_gradients(p: &Predictor, batch: &[(&CheckpointModel, f64)]) -> Result<(f64, GradStore)> {
    let scale = 1.0 / batch.len() as f64;
    let mut grads = GradStore::new(&p.store);
    let mut loss = 0.0;
    let width = rayon::current_num_threads().max(1);
    for group in batch.chunks(width) {
        let parts = group
            .par_iter()
            .map(|&(m, y)| {
                let mut g = Graph::new(&p.store);
                let pred = p.forward(&mut g, m)?;
                let l = g.bce(pred, &[y])?;
                let value = g.value(l).item();
                let grads = g.backward(l)?;
                Ok((value, grads.params().map(|(id, t)| (id, t.clone())).collect::<Vec<_>>()))
            })
            .collect::<Result<Vec<_>>>()?;
        for (value, gs) in parts {
            loss += scale * value;
            for (id, t) in gs {
                grads.accumulate(id, &t, scale);
            }
        }
    }
    for id in p.store.ids() {
        if grads.get(id).is_none() {
            grads.set(id, Tensor::zeros(p.store.get(id).shape()));
        }
    }
    Ok((loss, grads))
}

/// Mean BCE over `data` without gradients, plus the predictions.
pub fn evaluate_loss(p: &Predictor, data: &[(&CheckpointModel, f64)]) -> Result<(f64, Vec<f64>)> {
    let models: Vec<&CheckpointModel> = data.iter().map(|d| d.0).collect();
    let preds = p.predict_all(&models)?;
    let loss = preds
        .iter()
        .zip(data)
        .map(|(&q, &(_, y))| {
            let q = q.clamp(1e-7, 1.0 - 1e-7);
            -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
        })
        .sum::<f64>()
        / data.len() as f64;
    Ok((loss, preds))
}

/// τ between predictions and labels; `None` when undefined (all tied).
pub fn tau_or_none(pred: &[f64], y: &[f64]) -> Result<Option<f64>> {
    match kendall_tau(pred, y) {
        Ok(t) => Ok(Some(t)),
        Err(crate::kendall::KendallError::AllTied) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_tau: f64,
    pub val_loss: f64,
}

/// Where a predictor's training data came from; guards evaluation splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedOn {
    pub zoo: String,
    pub arch: Option<String>,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

impl TrainedOn {
    pub fn from_members(zoo: &str, train: &[Member<'_>], val: &[Member<'_>]) -> Self {
        Self {
            zoo: zoo.to_string(),
            arch: train.first().and_then(|m| m.model.metadata.get(META_ARCH).cloned()),
            train_ids: train.iter().map(|m| m.id).collect(),
            val_ids: val.iter().map(|m| m.id).collect(),
        }
    }
}

/// Full training state; serializable as an artifact and resumable.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub predictor: Predictor,
    pub adam: AdamState,
    /// Parameters of the best validation epoch so far.
    pub best_store: ParamStore,
    pub best: Option<BestEpoch>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub trained_on: TrainedOn,
    pub divergence: Option<String>,
}

fn labelled<'a>(ms: &[Member<'a>]) -> Vec<(&'a CheckpointModel, f64)> {
    ms.iter().map(|m| (m.model, m.accuracy)).collect()
}

impl Trainer {
    pub fn new(config: &RunConfig, zoo: &str, train: &[Member<'_>], val: &[Member<'_>]) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(validation("training and validation splits must be non-empty"));
        }
        if val.len() < 2 {
            return Err(validation("validation split needs at least two networks"));
        }
        let models: Vec<&CheckpointModel> = train.iter().map(|m| m.model).collect();
        let predictor = Predictor::for_training(config, &models)?;
        Ok(Self {
            adam: AdamState::new(&predictor.store, AdamConfig::default()),
            best_store: predictor.store.clone(),
            predictor,
            best: None,
            epoch: 0,
            history: Vec::new(),
            trained_on: TrainedOn::from_members(zoo, train, val),
            divergence: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.predictor.config
    }

    pub fn schedule(&self) -> Result<MultistepSchedule> {
        let c = self.config();
        Ok(MultistepSchedule::new(c.lr, c.milestone_epochs(), c.gamma)?)
    }

    /// Batches for a 0-based epoch; the last partial batch is kept.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config().seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order.chunks(self.config().batch_size).map(<[usize]>::to_vec).collect()
    }

    fn check_members(&self, train: &[Member<'_>], val: &[Member<'_>]) -> Result<()> {
        let ids = |ms: &[Member<'_>]| ms.iter().map(|m| m.id).collect::<Vec<_>>();
        if ids(train) != self.trained_on.train_ids || ids(val) != self.trained_on.val_ids {
            return Err(validation("training data differs from the data this run started with"));
        }
        Ok(())
    }

    /// Trains until `self.epoch == until`. On a non-finite loss or update the
    /// parameters roll back to the start of the failing epoch, `divergence`
    /// is set and a divergence error is returned.
    pub fn run(&mut self, train: &[Member<'_>], val: &[Member<'_>], until: usize) -> Result<()> {
        self.run_with(train, val, until, |_| {})
    }

    /// As [`Trainer::run`], calling `on_epoch` after every epoch.
    pub fn run_with(
        &mut self,
        train: &[Member<'_>],
        val: &[Member<'_>],
        until: usize,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<()> {
        self.check_members(train, val)?;
        if let Some(msg) = &self.divergence {
            return Err(Error::Divergence {
                epoch: self.epoch + 1,
                msg: msg.clone(),
            });
        }
        let schedule = self.schedule()?;
        let train_data = labelled(train);
        let val_data = labelled(val);
        let val_y: Vec<f64> = val.iter().map(|m| m.accuracy).collect();
        while self.epoch < until {
            let snapshot = (self.predictor.store.clone(), self.adam.clone());
            match self.one_epoch(&schedule, &train_data, &val_data, &val_y) {
                Ok(stats) => {
                    on_epoch(&stats);
                    self.history.push(stats);
                    self.epoch += 1;
                }
                Err(e @ (Error::Tensor(_) | Error::Divergence { .. })) if e.exit_code() == 4 => {
                    self.predictor.store = snapshot.0;
                    self.adam = snapshot.1;
                    let msg = e.to_string();
                    self.divergence = Some(msg.clone());
                    return Err(Error::Divergence {
                        epoch: self.epoch + 1,
                        msg,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn one_epoch(
        &mut self,
        schedule: &MultistepSchedule,
        train: &[(&CheckpointModel, f64)],
        val: &[(&CheckpointModel, f64)],
        val_y: &[f64],
    ) -> Result<EpochStats> {
        let lr = schedule.lr(self.epoch);
        let mut total = 0.0;
        for batch in self.epoch_order(self.epoch, train.len()) {
            let items: Vec<_> = batch.iter().map(|&i| train[i]).collect();
            let (loss, grads) = batch_gradients(&self.predictor, &items)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: self.epoch + 1,
                    msg: "non-finite training loss".into(),
                });
            }
            total += loss * items.len() as f64;
            adam_step(&mut self.predictor.store, &grads, &mut self.adam, lr)?;
        }
        let (val_loss, preds) = evaluate_loss(&self.predictor, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: self.epoch + 1,
                msg: "non-finite validation loss".into(),
            });
        }
        let val_tau = tau_or_none(&preds, val_y)?;
        let epoch = self.epoch + 1;
        if let Some(t) = val_tau {
            if self.best.as_ref().map_or(true, |b| t > b.val_tau) {
                self.best = Some(BestEpoch {
                    epoch,
                    val_tau: t,
                    val_loss,
                });
                self.best_store = self.predictor.store.clone();
            }
        }
        Ok(EpochStats {
            epoch,
            lr,
            train_loss: total / train.len() as f64,
            val_loss,
            val_tau,
        })
    }

    /// The predictor with the best-validation parameters (the current ones
    /// if no epoch produced a defined τ).
    pub fn best_predictor(&self) -> Predictor {
        let mut p = self.predictor.clone();
        if self.best.is_some() {
            p.store = self.best_store.clone();
        }
        p
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_loss,val_tau\n");
        for h in &self.history {
            let tau = h.val_tau.map(|t| t.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", h.epoch, h.lr, h.train_loss, h.val_loss, tau));
        }
        s
    }
}

/// Trains a fresh predictor for `config.epochs` epochs.
pub fn train_predictor(config: &RunConfig, zoo: &str, train: &[Member<'_>], val: &[Member<'_>]) -> Result<Trainer> {
    let mut t = Trainer::new(config, zoo, train, val)?;
    t.run(train, val, config.epochs)?;
    Ok(t)
}
