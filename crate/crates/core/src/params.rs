//! Named parameter store with accumulated gradients and an Adam optimizer.
//!
//! Parameters live in a `BTreeMap` so every iteration order is deterministic,
//! which keeps whole runs byte-reproducible for a fixed seed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};

use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Param {
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied across all parameters before the
    /// update; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; re-registering a name is a config error.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} already exists")));
        }
        let shape = value.shape().to_vec();
        self.params.insert(
            name.to_string(),
            Param {
                value,
                grad: Tensor::zeros(&shape),
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
            },
        );
        Ok(())
    }

    /// Uniform init on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn insert_uniform_fan_in<R: rand::Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
        self.insert(name, Tensor::rand_uniform(shape, -bound, bound, rng))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "set {name}: {:?} vs {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn add_grad(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if p.grad.shape() != delta.shape() {
            return Err(Error::ShapeMismatch(format!(
                "grad {name}: {:?} vs {:?}",
                p.grad.shape(),
                delta.shape()
            )));
        }
        for (g, d) in p.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Copies values (not optimizer state) from another store with identical
    /// layout. Used for episodic resets of the variational posterior.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, p) in &other.params {
            self.set(name, p.value.clone())?;
        }
        Ok(())
    }

    /// Resets optimizer moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in self.params.values_mut() {
            p.m.data_mut().fill(0.0);
            p.v.data_mut().fill(0.0);
        }
    }

    fn global_grad_norm(&self) -> f64 {
        let sq: f64 = self
            .params
            .values()
            .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum();
        math::sqrt(sq)
    }

    /// One Adam step with bias correction over every parameter, applied from
    /// the accumulated gradients. Gradients are clipped by global norm first,
    /// zeroed afterwards; the step counter increments once per call.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for (name, p) in &self.params {
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        let mut scale = 1.0;
        if let Some(clip) = cfg.clip_norm {
            let norm = self.global_grad_norm();
            if norm > clip {
                scale = clip / norm;
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powi(cfg.beta1, t);
        let bc2 = 1.0 - math::powi(cfg.beta2, t);
        for p in self.params.values_mut() {
            for i in 0..p.value.len() {
                let g = p.grad.data()[i] * scale;
                let m = cfg.beta1 * p.m.data()[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * p.v.data()[i] + (1.0 - cfg.beta2) * g * g;
                p.m.data_mut()[i] = m;
                p.v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value.data_mut()[i] -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
            }
            p.grad.data_mut().fill(0.0);
        }
        Ok(())
    }
}
