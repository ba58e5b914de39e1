use candle_core::{Tensor, D};

use super::{Init, ParamStore};
use crate::error::Result;

/// Affine map over the last dimension; weight stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(params: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        Self::with_gain(params, name, input, output, 1.0)
    }

    pub fn with_gain(params: &mut ParamStore, name: &str, input: usize, output: usize, gain: f64) -> Result<Self> {
        let weight = params.init(&format!("{name}.weight"), &[input, output], Init::Normal(gain / (input as f64).sqrt()))?;
        let bias = params.init(&format!("{name}.bias"), &[output], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }

    pub fn num_params(input: usize, output: usize) -> usize {
        input * output + output
    }
}

/// 1-D convolution over `(batch, channels, time)`.
/// Unpadded conv1d, run one batch element at a time. candle 0.11 computes
/// wrong input and kernel gradients for a batched conv1d on CPU; each
/// single-element call is exact.
pub fn conv1d(x: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let b = x.dim(0)?;
    if b == 1 {
        return Ok(x.conv1d(kernel, 0, stride, 1, 1)?);
    }
    let parts = (0..b).map(|i| x.narrow(0, i, 1)?.conv1d(kernel, 0, stride, 1, 1)).collect::<candle_core::Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 0)?)
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    /// The kernel, or its direction `v` when weight-normalized.
    pub weight: Tensor,
    /// Per-output-channel norm `g` of a weight-normalized kernel
    /// `w = g · v / ‖v‖`.
    pub gain: Option<Tensor>,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = params.init(&format!("{name}.weight"), &[output, input, kernel], Init::FanIn(1.0))?;
        let bias = params.init(&format!("{name}.bias"), &[output], Init::Zeros)?;
        Ok(Self { weight, gain: None, bias, stride, padding })
    }

    /// Weight-normalized variant. The gain starts at `‖v‖`, so the initial
    /// kernel equals the plain initialization.
    pub fn weight_normed(
        params: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let mut c = Self::new(params, name, input, output, kernel, stride, padding)?;
        let norm = c.weight.sqr()?.sum_keepdim((1, 2))?.sqrt()?;
        c.gain = Some(params.init_from(&format!("{name}.gain"), &norm)?);
        Ok(c)
    }

    pub fn effective_weight(&self) -> Result<Tensor> {
        match &self.gain {
            None => Ok(self.weight.clone()),
            Some(g) => {
                let norm = (self.weight.sqr()?.sum_keepdim((1, 2))? + 1e-12)?.sqrt()?;
                Ok(self.weight.broadcast_mul(&(g / norm)?)?)
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.bias.dim(0)?;
        // explicit zero padding: candle's conv1d backward underflows when
        // the padding exceeds (l_out - 1) · stride
        let x = if self.padding > 0 { x.pad_with_zeros(2, self.padding, self.padding)? } else { x.clone() };
        let y = conv1d(&x, &self.effective_weight()?, self.stride)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(params: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: params.init(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: params.init(&format!("{name}.beta"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta, 1e-5)
    }
}

/// Normalizes over the last dimension.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

/// Softmax over the last dimension. The subtracted max is detached; its
/// gradient contribution is zero anyway.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// `(B, C·f, T)` → `(B, C, T·f)`: channel `c·f + j` at time `t` lands at
/// time `t·f + j` of channel `c`.
pub fn pixel_shuffle_1d(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (b, cf, t) = x.dims3()?;
    let c = cf / factor;
    Ok(x.reshape((b, c, factor, t))?.transpose(2, 3)?.contiguous()?.reshape((b, c, t * factor))?)
}
