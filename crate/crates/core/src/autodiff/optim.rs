//! Named parameter storage, Adam with weight decay, and the step-decay
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Core,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: DenseTensor,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, group: ParamGroup, value: DenseTensor) -> usize {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn value(&self, i: usize) -> &DenseTensor {
        &self.params[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut DenseTensor {
        &mut self.params[i].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Inserts every parameter as a trainable leaf, in storage order.
    pub fn leaves(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.param(p.value.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayTarget {
    Networks,
    Cores,
    All,
}

impl DecayTarget {
    fn applies_to(self, group: ParamGroup) -> bool {
        match self {
            DecayTarget::All => true,
            DecayTarget::Networks => group == ParamGroup::Network,
            DecayTarget::Cores => group == ParamGroup::Core,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// `p <- p - lr * wd * p`, outside the moment estimates.
    Decoupled,
    /// `g <- g + wd * p` before the moment update (classic L2).
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDecay {
    pub coefficient: f64,
    pub target: DecayTarget,
    pub mode: DecayMode,
}

impl WeightDecay {
    pub fn none() -> Self {
        Self {
            coefficient: 0.0,
            target: DecayTarget::All,
            mode: DecayMode::Decoupled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<DenseTensor>,
    v: Vec<DenseTensor>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| DenseTensor::zeros(p.value.shape()).expect("parameter shape is valid"))
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[DenseTensor],
    state: &mut AdamState,
    lr: f64,
    decay: &WeightDecay,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::invalid(format!(
            "{} gradients / {} moment buffers for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::invalid(format!(
                "gradient shape {:?} does not match parameter `{}` {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Training {
                param: p.name.clone(),
                message: "non-finite gradient".into(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    for (i, g) in grads.iter().enumerate() {
        let param = &mut params.params[i];
        let wd = if decay.target.applies_to(param.group) {
            decay.coefficient
        } else {
            0.0
        };
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let p = param.value.data_mut();
        for k in 0..p.len() {
            let mut gk = g.data()[k];
            match decay.mode {
                DecayMode::Coupled => gk += wd * p[k],
                DecayMode::Decoupled => p[k] -= lr * wd * p[k],
            }
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `base_lr * decay_factor ^ floor(step / decay_every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            decay_factor: 0.2,
            decay_every: 500,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        let k = (step / self.decay_every.max(1)) as i32;
        // Dividing by the inverse factor keeps 1e-4 -> 2e-5 -> 4e-6 exact.
        self.base_lr / (1.0 / self.decay_factor).powi(k)
    }
}
