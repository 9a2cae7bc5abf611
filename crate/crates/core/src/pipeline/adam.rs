//! ADAM optimizer over a [`ParamStore`].

use crate::autodiff::{Gradients, ParamId, ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.003, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for every trainable tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        let m = ids.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        let v = ids.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Self { cfg, ids, m, v, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Nothing is written when any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for &id in &self.ids {
            if let Some(g) = grads.param_ref(id) {
                if !g.all_finite() {
                    return Err(Error::TrainingDiverged(format!("non-finite gradient for {}", store.entry(id).name)));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let Some(g) = grads.param_ref(id) else {
                // unused parameter: moments decay with a zero gradient
                self.m[k].data_mut().iter_mut().for_each(|m| *m *= beta1);
                self.v[k].data_mut().iter_mut().for_each(|v| *v *= beta2);
                continue;
            };
            let p = store.get_mut(id).data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
