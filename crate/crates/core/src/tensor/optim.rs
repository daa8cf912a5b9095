use serde::{Deserialize, Serialize};

use super::{GradStore, ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub(crate) first: Vec<Tensor>,
    pub(crate) second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |id| Tensor::zeros(params.get(id).shape());
        Self {
            config,
            step: 0,
            first: params.ids().map(zeros).collect(),
            second: params.ids().map(zeros).collect(),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub state: AdamState,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Self {
            state: AdamState::new(params, config),
        }
    }

    /// Applies one update to every parameter. Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        adam_step(params, grads, &mut self.state, lr)
    }
}

pub fn adam_step(params: &mut ParamStore, grads: &GradStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(TensorError::Invalid {
            op: "adam_step",
            msg: format!("state tracks {} tensors, store has {}", state.first.len(), params.len()),
        });
    }
    for id in params.ids() {
        if grads.get(id).is_none() {
            return Err(TensorError::MissingGradient(params.name(id).to_string()));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for id in params.ids() {
        let g = grads.get(id).expect("checked above").data();
        let m = state.first[id.index()].data_mut();
        let v = state.second[id.index()].data_mut();
        let w = params.get_mut(id).data_mut();
        for i in 0..w.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    if !params.is_finite() {
        return Err(TensorError::NonFinite { op: "adam_step" });
    }
    Ok(())
}

/// Learning rate multiplied by `gamma` at each milestone epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistepSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultistepSchedule {
    pub fn new(base_lr: f64, milestones: Vec<usize>, gamma: f64) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(TensorError::Invalid {
                op: "schedule",
                msg: format!("base learning rate {base_lr} must be positive"),
            });
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TensorError::Invalid {
                op: "schedule",
                msg: format!("milestones {milestones:?} must be strictly increasing"),
            });
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(TensorError::Invalid {
                op: "schedule",
                msg: format!("decay factor {gamma} must lie in (0, 1]"),
            });
        }
        Ok(Self {
            base_lr,
            milestones,
            gamma,
        })
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.gamma.powi(passed as i32)
    }
}
