//! Adam with one learning rate per parameter group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Group, ParamStore};
use crate::tensor::Tensor;

/// Learning rates of the three parameter groups. A zero rate freezes the group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLr {
    pub backbone: f64,
    pub decoder: f64,
    pub dgf: f64,
}

impl GroupLr {
    pub fn get(&self, g: Group) -> f64 {
        match g {
            Group::Backbone => self.backbone,
            Group::Decoder => self.decoder,
            Group::Dgf => self.dgf,
        }
    }

    pub fn uniform(lr: f64) -> Self {
        GroupLr {
            backbone: lr,
            decoder: lr,
            dgf: lr,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        GroupLr {
            backbone: self.backbone * k,
            decoder: self.decoder * k,
            dgf: self.dgf * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// Moments shaped like their parameters and a per-parameter step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub steps: Vec<u64>,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>, config: AdamConfig) -> Self {
        AdamState {
            config,
            steps: vec![0; params.len()],
            m: params.values().iter().map(Tensor::zeros_like).collect(),
            v: params.values().iter().map(Tensor::zeros_like).collect(),
        }
    }

    /// One update of every parameter that has a gradient and a positive group rate.
    /// Moments are kept in f64 arithmetic per element and stored as f32.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Tensor<f32>>], lr: &GroupLr) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("adam_step", &[grads.len(), self.m.len()], &[params.len()]));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.dims() != params.values()[i].dims() {
                    return Err(Error::shape("adam_step gradient", g.dims(), params.values()[i].dims()));
                }
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient(params.names()[i].clone()));
                }
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let rate = lr.get(params.groups()[i]);
            if rate <= 0.0 {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            let n = g.numel();
            let (mut m, mut v, mut p) = (self.m[i].to_vec(), self.v[i].to_vec(), params.values()[i].to_vec());
            for k in 0..n {
                let gk = g.data()[k] as f64;
                let mk = beta1 * m[k] as f64 + (1.0 - beta1) * gk;
                let vk = beta2 * v[k] as f64 + (1.0 - beta2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let update = rate * (mk / bc1) / ((vk / bc2).sqrt() + eps);
                p[k] = (p[k] as f64 - update) as f32;
            }
            let dims = g.dims().to_vec();
            self.m[i] = Tensor::from_vec(dims.clone(), m)?;
            self.v[i] = Tensor::from_vec(dims.clone(), v)?;
            params.set(i, Tensor::from_vec(dims, p)?)?;
        }
        Ok(())
    }
}
