//! Adam with bias correction and a floored per-epoch learning-rate decay.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplier applied to the learning rate once per epoch.
    pub decay: f64,
    pub lr_floor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.999_991,
            lr_floor: 1e-4,
        }
    }
}

/// Optimizer state: moments shaped like the parameters, the step count and
/// the current learning rate.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    lr: f64,
    steps: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        Adam {
            lr: config.lr,
            config,
            steps: 0,
            first: params.iter().map(|p| p.zeros_like()).collect(),
            second: params.iter().map(|p| p.zeros_like()).collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.expect_same_shape(g)?;
        }
        for (k, p) in params.iter().enumerate() {
            self.first[k].expect_same_shape(p)?;
        }
        self.steps += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powf(self.steps as f64);
        let bc2 = 1.0 - c.beta2.powf(self.steps as f64);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi.f64();
                let m1 = c.beta1 * mi.f64() + (1.0 - c.beta1) * gi;
                let v1 = c.beta2 * vi.f64() + (1.0 - c.beta2) * gi * gi;
                *mi = T::of(m1);
                *vi = T::of(v1);
                let update = self.lr * (m1 / bc1) / ((v1 / bc2).sqrt() + c.eps);
                *pi = T::of(pi.f64() - update);
            }
        }
        Ok(())
    }

    /// Applies the per-epoch decay, never going below the floor.
    pub fn end_epoch(&mut self) {
        self.lr = (self.lr * self.config.decay).max(self.config.lr_floor);
    }
}
