use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Rescale the stepped gradients so their joint L2 norm is at most this.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            max_grad_norm: None,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

#[derive(Debug, Clone)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Plain SGD or bias-corrected Adam over a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    slots: Vec<Option<AdamSlot>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            slots: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Updates `ids` in place from their gradients, then clears those
    /// gradients. Every listed parameter must hold a gradient.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<(), AutodiffError> {
        for &id in ids {
            if store.get(id).grad().is_none() {
                return Err(AutodiffError::MissingGrad {
                    name: store.name(id).to_string(),
                });
            }
        }
        let clip = match self.config.max_grad_norm {
            Some(max) => {
                let norm: f64 = ids
                    .iter()
                    .flat_map(|&id| store.get(id).grad().unwrap().iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        if self.slots.len() < store.len() {
            self.slots.resize(store.len(), None);
        }
        let cfg = self.config;
        for &id in ids {
            let t = store.get_mut(id);
            let grad: Vec<f64> = t.grad().unwrap().iter().map(|g| g * clip).collect();
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in t.data_mut().iter_mut().zip(&grad) {
                        *p -= cfg.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let slot = self.slots[id.index()].get_or_insert_with(|| AdamSlot {
                        m: vec![0.0; grad.len()],
                        v: vec![0.0; grad.len()],
                        t: 0,
                    });
                    slot.t += 1;
                    let bc1 = 1.0 - cfg.beta1.powi(slot.t as i32);
                    let bc2 = 1.0 - cfg.beta2.powi(slot.t as i32);
                    for (k, p) in t.data_mut().iter_mut().enumerate() {
                        let g = grad[k];
                        slot.m[k] = cfg.beta1 * slot.m[k] + (1.0 - cfg.beta1) * g;
                        slot.v[k] = cfg.beta2 * slot.v[k] + (1.0 - cfg.beta2) * g * g;
                        let m_hat = slot.m[k] / bc1;
                        let v_hat = slot.v[k] / bc2;
                        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                    }
                }
            }
            t.clear_grad();
        }
        Ok(())
    }
}
