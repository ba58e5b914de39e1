//! Small autograd toolkit over `candle_core`: named parameters, Adam,
//! a handful of layers and a finite-difference checker.

mod adam;
mod gradcheck;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{conv1d, layer_norm, leaky_relu, pixel_shuffle_1d, softmax_last, Conv1d, LayerNorm, Linear};
pub use params::{derive_seed, tensor_from_f64, Init, ParamStore};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Standard-normal tensor drawn from `rng`; candle's own CPU sampler is not
/// seedable.
pub fn randn(shape: &[usize], dtype: DType, rng: &mut ChaCha8Rng) -> crate::Result<Tensor> {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    tensor_from_f64(values, shape, dtype)
}

/// A fresh stream for `(seed, stream, index)`, used so that step `k` of a run
/// draws the same numbers whether or not the run was resumed.
pub fn stream_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{stream}/{index}")))
}

pub(crate) fn device() -> Device {
    Device::Cpu
}

/// Reads a scalar tensor as `f64` whatever its dtype.
pub fn scalar(t: &Tensor) -> crate::Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
