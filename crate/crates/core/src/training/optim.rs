use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Adam {
            config,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn for_store(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let shapes: Vec<&[usize]> = store.iter().map(|(_, p)| p.value.shape()).collect();
        Self::new(config, &shapes)
    }

    /// One update of every parameter in `params` from the matching `grads`.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Input(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::dim("adam_step", p.shape(), g.shape()));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2, e) = (T::of(beta1), T::of(beta2), T::of(eps));
        let (one, lr_t, c1, c2) = (T::one(), T::of(lr), T::of(c1), T::of(c2));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((th, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *th = *th - lr_t * mh / (vh.sqrt() + e);
            }
        }
        Ok(())
    }

    /// Updates a store from its own `grad` fields.
    pub fn step_store(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        let params = store.params_mut();
        let grads: Vec<Tensor<T>> = params.iter().map(|p| p.grad.clone()).collect();
        let mut values: Vec<&mut Tensor<T>> = params.iter_mut().map(|p| &mut p.value).collect();
        let grads: Vec<&Tensor<T>> = grads.iter().collect();
        self.step(&mut values, &grads, lr)
    }
}

/// Linear warmup from 0 to `peak`, then half-cosine decay back to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
}

impl LrSchedule {
    pub fn from_epochs(
        peak: f64,
        warmup_epochs: usize,
        decay_epochs: usize,
        steps_per_epoch: usize,
    ) -> Self {
        LrSchedule {
            peak,
            warmup_steps: (warmup_epochs * steps_per_epoch) as u64,
            decay_steps: (decay_epochs * steps_per_epoch) as u64,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.warmup_steps + self.decay_steps
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step <= self.warmup_steps && self.warmup_steps > 0 {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let into = step - self.warmup_steps;
        if into >= self.decay_steps {
            return if self.decay_steps == 0 && into == 0 {
                self.peak
            } else {
                0.0
            };
        }
        let u = into as f64 / self.decay_steps as f64;
        self.peak * (1.0 + (std::f64::consts::PI * u).cos()) / 2.0
    }
}
