//! Adam and plain SGD over a [`Module`]'s trainable parameters.

use std::collections::HashMap;

use crate::checkpoint::Record;
use crate::nn::Module;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One bias-corrected Adam step at 1-based step `t`.
pub fn adam_update(param: &mut [f64], grad: &[f64], slot: &mut AdamSlot, t: u64, cfg: &AdamConfig) {
    if slot.m.len() != param.len() {
        slot.m = vec![0.0; param.len()];
        slot.v = vec![0.0; param.len()];
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
        slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = slot.m[i] / bc1;
        let v_hat = slot.v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// `p <- p - lr * g`.
pub fn sgd_update(param: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

fn check_finite(name: &str, grad: &[f64]) -> Result<(), OptimError> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(OptimError::NonFinite(name.to_string()))
    }
}

pub trait Optimizer {
    fn step(&mut self, module: &mut dyn Module) -> Result<(), OptimError>;
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    slots: HashMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam { cfg, t: 0, slots: HashMap::new() }
    }

    /// Moments and step counter as checkpoint records under `prefix`.
    pub fn state(&self, prefix: &str) -> Vec<Record> {
        let mut names: Vec<&String> = self.slots.keys().collect();
        names.sort();
        let mut out = vec![Record { name: format!("{prefix}.t"), shape: vec![1], data: vec![self.t as f64] }];
        for n in names {
            let s = &self.slots[n];
            out.push(Record { name: format!("{prefix}.m.{n}"), shape: vec![s.m.len()], data: s.m.clone() });
            out.push(Record { name: format!("{prefix}.v.{n}"), shape: vec![s.v.len()], data: s.v.clone() });
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, records: &[Record]) {
        self.slots.clear();
        for r in records {
            if r.name == format!("{prefix}.t") {
                self.t = r.data[0] as u64;
            } else if let Some(n) = r.name.strip_prefix(&format!("{prefix}.m.")) {
                self.slots.entry(n.to_string()).or_default().m = r.data.clone();
            } else if let Some(n) = r.name.strip_prefix(&format!("{prefix}.v.")) {
                self.slots.entry(n.to_string()).or_default().v = r.data.clone();
            }
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, module: &mut dyn Module) -> Result<(), OptimError> {
        let mut err = None;
        module.visit(&mut |p| {
            if err.is_none() && p.trainable() {
                if let Err(e) = check_finite(p.name(), &p.grad()) {
                    err = Some(e);
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        self.t += 1;
        let (t, cfg) = (self.t, self.cfg);
        let slots = &mut self.slots;
        module.visit_mut(&mut |p| {
            if !p.trainable() {
                return;
            }
            let grad = p.grad();
            let mut data = p.data().to_vec();
            let slot = slots.entry(p.name().to_string()).or_default();
            adam_update(&mut data, &grad, slot, t, &cfg);
            p.set_data(data).expect("same length");
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, module: &mut dyn Module) -> Result<(), OptimError> {
        let mut err = None;
        module.visit(&mut |p| {
            if err.is_none() && p.trainable() {
                if let Err(e) = check_finite(p.name(), &p.grad()) {
                    err = Some(e);
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let lr = self.lr;
        module.visit_mut(&mut |p| {
            if !p.trainable() {
                return;
            }
            let grad = p.grad();
            let mut data = p.data().to_vec();
            sgd_update(&mut data, &grad, lr);
            p.set_data(data).expect("same length");
        });
        Ok(())
    }
}
