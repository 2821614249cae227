use std::collections::BTreeMap;

use super::{DiffError, Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `theta <- theta * (1 - lr * weight_decay)` before
    /// the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 3e-7,
        }
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), DiffError> {
        for name in store.names() {
            if grads.get(name).is_none() {
                return Err(DiffError::MissingGradient(name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, theta) in store.iter_mut() {
            let g = grads.get(name).expect("checked above");
            if g.dim() != theta.dim() {
                return Err(DiffError::Shape {
                    op: "adam",
                    detail: format!("{name}: grad {:?} vs param {:?}", g.dim(), theta.dim()),
                });
            }
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(theta.dim()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(theta.dim()));
            if weight_decay != 0.0 {
                *theta *= 1.0 - lr * weight_decay;
            }
            ndarray::Zip::from(theta)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|t, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *t -= lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}
