//! Sampled hyperparameters and plain-SGD training of one zoo member.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arch::{build_arch, Activation, ArchId, Dropout, Init, InitScheme, TraineeNet};
use super::dataset::{Split, SyntheticDataset};
use crate::error::{validation, Result};
use crate::tensor::{Graph, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub init: Init,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Sampling ranges; `lr` and `init_std` are log-uniform, the rest uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRanges {
    pub lr: (f64, f64),
    pub weight_decay: (f64, f64),
    pub dropout: (f64, f64),
    pub init_std: (f64, f64),
    pub epochs: (usize, usize),
    pub batch_size: usize,
}

impl Default for HyperRanges {
    fn default() -> Self {
        Self {
            lr: (3e-3, 3e-1),
            weight_decay: (0.0, 1e-2),
            dropout: (0.0, 0.5),
            init_std: (0.08, 0.5),
            epochs: (1, 8),
            batch_size: 32,
        }
    }
}

impl HyperRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !(ordered(self.lr) && self.lr.0 > 0.0) || !(ordered(self.init_std) && self.init_std.0 > 0.0) {
            return Err(validation("lr and init std ranges must be positive and ordered"));
        }
        if !(ordered(self.weight_decay) && self.weight_decay.0 >= 0.0) {
            return Err(validation("weight decay range must be non-negative and ordered"));
        }
        if !(ordered(self.dropout) && self.dropout.0 >= 0.0 && self.dropout.1 < 1.0) {
            return Err(validation("dropout range must lie in [0, 1)"));
        }
        if self.epochs.0 == 0 || self.epochs.0 > self.epochs.1 || self.batch_size == 0 {
            return Err(validation("epochs range must be positive and ordered; batch size positive"));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Hyperparameters {
        let log_uniform = |(lo, hi): (f64, f64), rng: &mut R| (rng.gen_range(lo.ln()..=hi.ln())).exp();
        Hyperparameters {
            lr: log_uniform(self.lr, rng),
            weight_decay: rng.gen_range(self.weight_decay.0..=self.weight_decay.1),
            dropout: rng.gen_range(self.dropout.0..=self.dropout.1),
            init: Init {
                scheme: if rng.gen_bool(0.5) { InitScheme::Normal } else { InitScheme::Uniform },
                std: log_uniform(self.init_std, rng),
            },
            activation: if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh },
            epochs: rng.gen_range(self.epochs.0..=self.epochs.1),
            batch_size: self.batch_size,
        }
    }
}

fn batch_tensor(split: &Split, idx: &[usize], shape: [usize; 3]) -> Result<(Tensor, Vec<usize>)> {
    let len = shape.iter().product::<usize>();
    let mut data = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        data.extend_from_slice(&split.images[i * len..(i + 1) * len]);
    }
    let t = Tensor::new(&[idx.len(), shape[0], shape[1], shape[2]], data)?;
    Ok((t, idx.iter().map(|&i| split.labels[i]).collect()))
}

/// Fraction of correctly classified images in `split`.
pub fn accuracy(net: &TraineeNet, store: &ParamStore, act: Activation, split: &Split, shape: [usize; 3]) -> Result<f64> {
    let idx: Vec<usize> = (0..split.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(100) {
        let (x, labels) = batch_tensor(split, chunk, shape)?;
        let mut g = Graph::new(store);
        let xv = g.constant(x)?;
        let logits = net.forward::<rand_chacha::ChaCha8Rng>(&mut g, xv, act, None)?;
        for (row, &l) in g.value(logits).data().chunks(10).zip(&labels) {
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            correct += usize::from(pred == l);
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

pub struct TrainedTrainee {
    pub net: TraineeNet,
    pub store: ParamStore,
    pub test_accuracy: f64,
}

/// Trains one network with minibatch SGD and L2 weight decay. A non-finite
/// loss or parameter surfaces as an error.
pub fn train_trainee<R: Rng>(arch: ArchId, data: &SyntheticDataset, hp: &Hyperparameters, rng: &mut R) -> Result<TrainedTrainee> {
    let shape = data.shape();
    let mut store = ParamStore::new();
    let net = build_arch(arch, shape, hp.init, &mut store, rng)?;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for _ in 0..hp.epochs {
        order.shuffle(rng);
        for batch in order.chunks(hp.batch_size) {
            let (x, labels) = batch_tensor(&data.train, batch, shape)?;
            let grads = {
                let mut g = Graph::new(&store);
                let xv = g.constant(x)?;
                let drop = Some(Dropout {
                    rate: hp.dropout,
                    rng: &mut *rng,
                });
                let logits = net.forward(&mut g, xv, hp.activation, drop)?;
                let loss = g.softmax_cross_entropy(logits, &labels)?;
                g.backward(loss)?
                    .params()
                    .map(|(id, t)| (id, t.clone()))
                    .collect::<Vec<_>>()
            };
            for (id, grad) in grads {
                let w = store.get_mut(id).data_mut();
                for (wi, gi) in w.iter_mut().zip(grad.data()) {
                    *wi -= hp.lr * (gi + hp.weight_decay * *wi);
                }
            }
            if !store.is_finite() {
                return Err(crate::tensor::TensorError::NonFinite { op: "sgd" }.into());
            }
        }
    }
    let test_accuracy = accuracy(&net, &store, hp.activation, &data.test, shape)?;
    Ok(TrainedTrainee {
        net,
        store,
        test_accuracy,
    })
}
