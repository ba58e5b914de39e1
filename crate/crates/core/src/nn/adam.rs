use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// they can be checkpointed alongside the weights.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `params` that has a gradient.
    /// Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        let mut present = Vec::new();
        for (name, var) in params.iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                let g = g.detach();
                sq += super::scalar(&g.sqr()?.sum_all()?)?;
                present.push((name.to_string(), var, g));
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::NumericalDivergence(format!("gradient norm is {norm}")));
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, var, g) in present {
            let g = if scale != 1.0 { g.affine(scale, 0.0)? } else { g };
            let m = match self.m.get(&name) {
                Some(m) => ((m * beta1)? + (&g * (1.0 - beta1))?)?,
                None => (&g * (1.0 - beta1))?,
            };
            let v = match self.v.get(&name) {
                Some(v) => ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                None => (g.sqr()? * (1.0 - beta2))?,
            };
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
        Ok(norm)
    }

    /// Moment buffers as named tensors plus the step counter.
    pub fn export(&self, prefix: &str) -> (Vec<(String, Tensor)>, u64) {
        let mut out = Vec::new();
        for (k, t) in &self.m {
            out.push((format!("{prefix}m.{k}"), t.clone()));
        }
        for (k, t) in &self.v {
            out.push((format!("{prefix}v.{k}"), t.clone()));
        }
        (out, self.step)
    }

    pub fn import(config: AdamConfig, prefix: &str, tensors: &BTreeMap<String, Tensor>, step: u64) -> Self {
        let mut adam = Self::new(config);
        adam.step = step;
        for (k, t) in tensors {
            if let Some(rest) = k.strip_prefix(prefix) {
                if let Some(name) = rest.strip_prefix("m.") {
                    adam.m.insert(name.to_string(), t.clone());
                } else if let Some(name) = rest.strip_prefix("v.") {
                    adam.v.insert(name.to_string(), t.clone());
                }
            }
        }
        adam
    }
}
