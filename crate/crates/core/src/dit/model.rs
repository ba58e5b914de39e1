use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use super::DitConfig;
use crate::error::{Error, Result};
use crate::nn::{self, softmax_last, Init, LayerNorm, Linear, ParamStore};

/// Sines then cosines of `t · f_i` with `f_i` geometric over `[1, 10⁴]`.
pub fn timestep_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("timestep embedding width {dim} must be even and positive")));
    }
    let half = dim / 2;
    let freq = |i: usize| if half == 1 { 1.0 } else { 10f64.powf(4.0 * i as f64 / (half - 1) as f64) };
    let mut out = Vec::with_capacity(dim);
    out.extend((0..half).map(|i| (t * freq(i)).sin()));
    out.extend((0..half).map(|i| (t * freq(i)).cos()));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CondModality {
    Text,
    Audio,
    Null,
}

/// Conditioning for one sequence. `style = None` selects the learned null
/// token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBundle {
    pub style: Option<Vec<f64>>,
    pub t: f64,
    pub modality: CondModality,
}

impl ConditionBundle {
    pub fn null(t: f64) -> Self {
        Self { style: None, t, modality: CondModality::Null }
    }
}

/// Anything that predicts a velocity field `(B, F, C)` for noisy latents
/// `(B, F, C)`; `mask` is `(B, F)` with 1 on valid frames.
pub trait VelocityModel {
    fn velocity(&self, x_t: &Tensor, conds: &[ConditionBundle], mask: Option<&Tensor>) -> Result<Tensor>;
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Pre-norm transformer over latent frames, conditioned by per-frame channel
/// concatenation of the noisy latent, the style vector and the timestep
/// embedding.
#[derive(Debug, Clone)]
pub struct AccompDit {
    pub config: DitConfig,
    pub params: ParamStore,
    input: Linear,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    head: Linear,
    null_token: Tensor,
}

impl AccompDit {
    pub fn new(config: DitConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new(dtype, seed);
        let h = config.hidden_dim;
        let input = Linear::new(&mut p, "input", config.input_width(), h)?;
        let mut blocks = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let n = |s: &str| format!("block{i}.{s}");
            blocks.push(Block {
                ln1: LayerNorm::new(&mut p, &n("ln1"), h)?,
                qkv: Linear::new(&mut p, &n("qkv"), h, 3 * h)?,
                out: Linear::new(&mut p, &n("out"), h, h)?,
                ln2: LayerNorm::new(&mut p, &n("ln2"), h)?,
                fc1: Linear::new(&mut p, &n("fc1"), h, 4 * h)?,
                fc2: Linear::new(&mut p, &n("fc2"), 4 * h, h)?,
            });
        }
        let final_ln = LayerNorm::new(&mut p, "final_ln", h)?;
        let head = Linear::with_gain(&mut p, "head", h, config.latent_channels, 0.1)?;
        let null_token = p.init("null_token", &[config.style_dim], Init::Normal(1.0 / (config.style_dim as f64).sqrt()))?;
        Ok(Self { config, params: p, input, blocks, final_ln, head, null_token })
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn null_token(&self) -> &Tensor {
        &self.null_token
    }

    /// `[noisy ‖ style ‖ timestep]` per frame: `(B, F, 2·latent + style)`.
    pub fn assemble_input(&self, x_t: &Tensor, conds: &[ConditionBundle]) -> Result<Tensor> {
        let (b, f, c) = x_t.dims3()?;
        let cfg = &self.config;
        if c != cfg.latent_channels {
            return Err(Error::ShapeMismatch(format!("latent has {c} channels, model expects {}", cfg.latent_channels)));
        }
        if conds.len() != b {
            return Err(Error::ShapeMismatch(format!("{} conditions for a batch of {b}", conds.len())));
        }
        let mut styles = Vec::with_capacity(b);
        let mut temb = Vec::with_capacity(b * c);
        for cond in conds {
            styles.push(match &cond.style {
                Some(v) if v.len() == cfg.style_dim => nn::tensor_from_f64(v.clone(), &[1, cfg.style_dim], self.dtype())?,
                Some(v) => {
                    return Err(Error::ShapeMismatch(format!("style has {} dims, model expects {}", v.len(), cfg.style_dim)));
                }
                None => self.null_token.reshape((1, cfg.style_dim))?,
            });
            temb.extend(timestep_embedding(cond.t, c)?);
        }
        let style = Tensor::cat(&styles, 0)?.unsqueeze(1)?.broadcast_as((b, f, cfg.style_dim))?;
        let temb = nn::tensor_from_f64(temb, &[b, 1, c], self.dtype())?.broadcast_as((b, f, c))?;
        Ok(Tensor::cat(&[x_t, &style, &temb], 2)?)
    }

    /// Runs the transformer on an assembled input.
    pub fn forward_assembled(&self, input: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, f, _) = input.dims3()?;
        let h = self.config.hidden_dim;
        let heads = self.config.num_heads;
        let dh = h / heads;
        let bias = match mask {
            Some(m) => Some(((m - 1.0)? * 1e9)?.reshape((b, 1, 1, f))?.to_dtype(self.dtype())?),
            None => None,
        };
        let rope = if self.config.rope { Some(rope_tables(f, dh, self.dtype())?) } else { None };
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = self.input.forward(input)?;
        for blk in &self.blocks {
            let a = blk.ln1.forward(&x)?;
            let qkv = blk.qkv.forward(&a)?;
            let split = |i: usize| -> Result<Tensor> {
                Ok(qkv.narrow(2, i * h, h)?.reshape((b, f, heads, dh))?.transpose(1, 2)?.contiguous()?)
            };
            let (mut q, mut k, v) = (split(0)?, split(1)?, split(2)?);
            if let Some((cos, sin)) = &rope {
                q = apply_rope(&q, cos, sin)?;
                k = apply_rope(&k, cos, sin)?;
            }
            let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
            if let Some(bias) = &bias {
                scores = scores.broadcast_add(bias)?;
            }
            let attn = softmax_last(&scores)?;
            let o = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, f, h))?;
            x = (x + blk.out.forward(&o)?)?;
            let m = blk.fc2.forward(&blk.fc1.forward(&blk.ln2.forward(&x)?)?.silu()?)?;
            x = (x + m)?;
        }
        self.head.forward(&self.final_ln.forward(&x)?)
    }
}

impl VelocityModel for AccompDit {
    fn velocity(&self, x_t: &Tensor, conds: &[ConditionBundle], mask: Option<&Tensor>) -> Result<Tensor> {
        let out = self.forward_assembled(&self.assemble_input(x_t, conds)?, mask)?;
        Ok(out)
    }
}

fn rope_tables(frames: usize, dh: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
    let half = dh / 2;
    let mut cos = Vec::with_capacity(frames * half);
    let mut sin = Vec::with_capacity(frames * half);
    for p in 0..frames {
        for i in 0..half {
            let angle = p as f64 * 10_000f64.powf(-2.0 * i as f64 / dh as f64);
            cos.push(angle.cos());
            sin.push(angle.sin());
        }
    }
    Ok((nn::tensor_from_f64(cos, &[frames, half], dtype)?, nn::tensor_from_f64(sin, &[frames, half], dtype)?))
}

/// Rotates feature pairs `(x_i, x_{i+half})` of `(B, heads, F, dh)` by the
/// per-position angles.
fn apply_rope(x: &Tensor, cos: &Tensor, sin: &Tensor) -> Result<Tensor> {
    let half = x.dim(D::Minus1)? / 2;
    let x1 = x.narrow(D::Minus1, 0, half)?;
    let x2 = x.narrow(D::Minus1, half, half)?;
    let r1 = (x1.broadcast_mul(cos)? - x2.broadcast_mul(sin)?)?;
    let r2 = (x1.broadcast_mul(sin)? + x2.broadcast_mul(cos)?)?;
    Ok(Tensor::cat(&[r1, r2], D::Minus1)?)
}
