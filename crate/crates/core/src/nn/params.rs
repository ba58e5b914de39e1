use std::collections::BTreeMap;

use candle_core::{DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::device;
use crate::embed::seeded_hash;
use crate::error::{Error, Result};

/// Initial value of a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// N(0, std²).
    Normal(f64),
    /// N(0, gain²/fan_in) where fan_in is the product of all but the first
    /// dimension for rank ≥ 2 tensors.
    FanIn(f64),
}

/// Seed for a named sub-stream of `seed`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    seeded_hash(name.as_bytes(), seed)
}

pub fn tensor_from_f64(values: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, &device())?.to_dtype(dtype)?)
}

/// Named trainable tensors. Each parameter is initialized from its own
/// stream keyed by name, so adding a layer never perturbs the others.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    seed: u64,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self { vars: BTreeMap::new(), dtype, seed }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Creates parameter `name` holding a copy of `value`.
    pub fn init_from(&mut self, name: &str, value: &Tensor) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::InvalidArgument(format!("parameter `{name}` defined twice")));
        }
        let var = Var::from_tensor(&value.to_dtype(self.dtype)?.copy()?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    /// Creates parameter `name` and returns a handle sharing its storage.
    pub fn init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::InvalidArgument(format!("parameter `{name}` defined twice")));
        }
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) | Init::FanIn(std) => {
                let std = match init {
                    Init::FanIn(gain) => {
                        let fan_in: usize = if shape.len() >= 2 { shape[1..].iter().product() } else { shape[0] };
                        gain / (fan_in.max(1) as f64).sqrt()
                    }
                    _ => std,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, name));
                (0..n).map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>()
            }
        };
        let var = Var::from_tensor(&tensor_from_f64(values, shape, self.dtype)?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.as_tensor().elem_count()).sum()
    }

    /// Copies of every parameter, keyed by `prefix + name`.
    pub fn export(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.vars.iter().map(|(k, v)| (format!("{prefix}{k}"), v.as_detached_tensor())).collect()
    }

    /// Overwrites every parameter from `tensors[prefix + name]`. All names must
    /// be present with matching shapes.
    pub fn import(&self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let key = format!("{prefix}{name}");
            let src = tensors
                .get(&key)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor `{key}`")))?;
            if src.dims() != var.as_tensor().dims() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    src.dims(),
                    var.as_tensor().dims()
                )));
            }
            var.set(&src.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_keyed_by_name() {
        let mut a = ParamStore::new(DType::F64, 1);
        let x = a.init("x", &[3, 4], Init::FanIn(1.0)).unwrap();
        let mut b = ParamStore::new(DType::F64, 1);
        b.init("other", &[5], Init::Normal(1.0)).unwrap();
        let y = b.init("x", &[3, 4], Init::FanIn(1.0)).unwrap();
        assert_eq!(x.to_vec2::<f64>().unwrap(), y.to_vec2::<f64>().unwrap());
        assert_eq!(a.num_params(), 12);
        assert!(a.init("x", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn handles_share_storage_with_vars() {
        let mut p = ParamStore::new(DType::F32, 0);
        let t = p.init("w", &[2], Init::Zeros).unwrap();
        p.get("w").unwrap().set(&Tensor::new(&[1f32, 2.0], &device()).unwrap()).unwrap();
        assert_eq!(t.to_vec1::<f32>().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn export_import_round_trip() {
        let mut p = ParamStore::new(DType::F32, 0);
        p.init("a", &[2, 2], Init::Normal(1.0)).unwrap();
        let saved: BTreeMap<_, _> = p.export("m.").into_iter().collect();
        let mut q = ParamStore::new(DType::F32, 99);
        let qa = q.init("a", &[2, 2], Init::Normal(1.0)).unwrap();
        q.import("m.", &saved).unwrap();
        assert_eq!(qa.to_vec2::<f32>().unwrap(), saved["m.a"].to_vec2::<f32>().unwrap());
        let mut r = ParamStore::new(DType::F32, 0);
        r.init("a", &[4], Init::Zeros).unwrap();
        assert!(r.import("m.", &saved).is_err());
    }
}
