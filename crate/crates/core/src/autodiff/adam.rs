use super::{ParamStore, Tensor};
use crate::error::{ClarError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `value` in place. `step` is 1-based.
pub fn adam_update(value: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, step: u64) {
    debug_assert!(step >= 1);
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        value[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Adam with moment state that persists across calls.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(ClarError::invalid(format!("learning rate must be > 0, got {}", cfg.lr)));
        }
        Ok(Self { cfg, step: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        for (i, p) in store.iter_mut().enumerate() {
            let grad = p.grad.data().to_vec();
            adam_update(p.value.data_mut(), &grad, &mut self.m[i], &mut self.v[i], &self.cfg, self.step);
        }
    }

    /// Moment and step state as checkpoint records (`adam.step`, `adam.m.<name>`, `adam.v.<name>`).
    pub fn state_records(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(self.step as f64))];
        if self.m.len() == store.len() {
            for (i, p) in store.iter().enumerate() {
                let shape = p.value.shape();
                out.push((format!("adam.m.{}", p.name), Tensor::new(shape, self.m[i].clone()).expect("moment shape")));
                out.push((format!("adam.v.{}", p.name), Tensor::new(shape, self.v[i].clone()).expect("moment shape")));
            }
        }
        out
    }

    pub fn load_state(&mut self, store: &ParamStore, records: &[(String, Tensor)]) -> Result<()> {
        let find = |n: &str| records.iter().find(|(k, _)| k == n).map(|(_, t)| t);
        let Some(step) = find("adam.step") else {
            return Err(ClarError::Checkpoint("missing `adam.step`".into()));
        };
        self.step = step.item() as u64;
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for p in store.iter() {
            match (find(&format!("adam.m.{}", p.name)), find(&format!("adam.v.{}", p.name))) {
                (Some(mt), Some(vt)) if mt.shape() == p.value.shape() && vt.shape() == p.value.shape() => {
                    m.push(mt.data().to_vec());
                    v.push(vt.data().to_vec());
                }
                _ => return Err(ClarError::Checkpoint(format!("missing Adam moments for `{}`", p.name))),
            }
        }
        self.m = m;
        self.v = v;
        Ok(())
    }
}
