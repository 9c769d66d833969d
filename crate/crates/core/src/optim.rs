//! SGD and AdamW updates over a named parameter map.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type ParamMap = BTreeMap<String, Tensor>;
pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum UpdateRule {
    Sgd,
    AdamW { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub rule: UpdateRule,
    pub lr: f64,
    step_count: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer { rule: UpdateRule::Sgd, lr, step_count: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// AdamW with the usual defaults (β₁ 0.9, β₂ 0.999, ε 1e-8, wd 0.01).
    pub fn adamw(lr: f64) -> Self {
        Optimizer {
            rule: UpdateRule::AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 },
            lr,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update. The whole step aborts (parameters untouched) if
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamMap, grads: &GradMap) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
            }
        }
        self.step_count += 1;
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Lookup(format!("unknown parameter `{name}`")))?;
            match self.rule {
                UpdateRule::Sgd => {
                    for (w, gv) in p.data.iter_mut().zip(&g.data) {
                        *w -= self.lr * gv;
                    }
                }
                UpdateRule::AdamW { beta1, beta2, eps, weight_decay } => {
                    let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    let bc1 = 1.0 - beta1.powi(self.step_count as i32);
                    let bc2 = 1.0 - beta2.powi(self.step_count as i32);
                    for i in 0..g.len() {
                        let gv = g.data[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gv;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gv * gv;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p.data[i] -=
                            self.lr * (mhat / (vhat.sqrt() + eps) + weight_decay * p.data[i]);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    pub fn describe(&self) -> String {
        match self.rule {
            UpdateRule::Sgd => format!("sgd(lr={})", self.lr),
            UpdateRule::AdamW { beta1, beta2, eps, weight_decay } => format!(
                "adamw(lr={}, beta1={beta1}, beta2={beta2}, eps={eps}, wd={weight_decay})",
                self.lr
            ),
        }
    }
}
