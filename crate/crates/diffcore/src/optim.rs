//! Adam with coupled L2 weight decay, and reduce-on-plateau scheduling.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use crate::Elem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    /// Classifier recipe: lr 1e-3, weight decay 2e-5.
    pub fn classifier() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 2e-5,
        }
    }

    /// Critic/generator recipe: fixed lr 2e-4, betas (0, 0.9).
    pub fn gan() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Elem> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// Updates `params` in place (each becomes a fresh leaf variable).
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return invalid(
                "adam_step",
                format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            );
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.epsilon);
        let wd = T::lit(c.weight_decay);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != p.numel() {
                return invalid(
                    "adam_step",
                    format!("param {i}: shape {:?} vs grad {:?}", p.shape(), g.shape()),
                );
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut data = p.to_vec();
            for (j, w) in data.iter_mut().enumerate() {
                let gj = g.data()[j] + wd * *w;
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
            *p = Tensor::var(data, p.shape())?;
        }
        Ok(())
    }
}

/// Reduce-on-plateau for a metric that should increase (validation accuracy).
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub threshold: f64,
    pub best: Option<f64>,
    pub epochs_since_improvement: usize,
}

impl PlateauState {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64, threshold: f64) -> Self {
        PlateauState {
            lr,
            factor,
            patience,
            min_lr,
            threshold,
            best: None,
            epochs_since_improvement: 0,
        }
    }

    /// Feeds one epoch's metric and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(best) => metric > best + self.threshold,
        };
        if improved {
            self.best = Some(metric);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.epochs_since_improvement = 0;
            }
        }
        self.lr
    }
}
