use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VaeConfig;
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::nn::{self, leaky_relu, pixel_shuffle_1d, Conv1d, Linear, ParamStore};

/// A `frames × channels` latent sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTensor {
    pub frames: usize,
    pub channels: usize,
    /// Row-major, one row per frame.
    pub values: Vec<f64>,
    pub frame_rate: f64,
}

impl LatentTensor {
    pub fn new(frames: usize, channels: usize, values: Vec<f64>, frame_rate: f64) -> Result<Self> {
        if values.len() != frames * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {frames} × {channels} latent",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite latent value".into()));
        }
        Ok(Self { frames, channels, values, frame_rate })
    }

    pub fn zeros(frames: usize, channels: usize, frame_rate: f64) -> Self {
        Self { frames, channels, values: vec![0.0; frames * channels], frame_rate }
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// `(1, channels, frames)`.
    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        let t = nn::tensor_from_f64(self.values.clone(), &[1, self.frames, self.channels], dtype)?;
        Ok(t.transpose(1, 2)?.contiguous()?)
    }

    /// Reads item `index` of a `(B, channels, frames)` tensor.
    pub fn from_tensor(t: &Tensor, index: usize, frame_rate: f64) -> Result<Self> {
        let (_, c, f) = t.dims3()?;
        let values = t.get(index)?.t()?.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Self::new(f, c, values, frame_rate)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * k).collect(), ..self.clone() }
    }
}

/// Encoder log-variances lie in `(-LOGVAR_BOUND, LOGVAR_BOUND)`.
pub const LOGVAR_BOUND: f64 = 8.0;

/// `z = mu + exp(logvar / 2) · eps` with `eps` drawn from `rng`.
pub fn reparameterize(mu: &LatentTensor, logvar: &LatentTensor, rng: &mut ChaCha8Rng) -> Result<LatentTensor> {
    use rand_distr::{Distribution, StandardNormal};
    if mu.frames != logvar.frames || mu.channels != logvar.channels {
        return Err(Error::ShapeMismatch("mu and logvar differ in shape".into()));
    }
    let values = mu
        .values
        .iter()
        .zip(&logvar.values)
        .map(|(m, lv)| {
            let e: f64 = StandardNormal.sample(rng);
            m + (0.5 * lv).exp() * e
        })
        .collect();
    LatentTensor::new(mu.frames, mu.channels, values, mu.frame_rate)
}

#[derive(Debug, Clone)]
struct ResUnit {
    conv1: Conv1d,
    conv2: Conv1d,
}

impl ResUnit {
    fn new(p: &mut ParamStore, name: &str, ch: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv1d::weight_normed(p, &format!("{name}.conv1"), ch, ch, 3, 1, 1)?,
            conv2: Conv1d::weight_normed(p, &format!("{name}.conv2"), ch, ch, 1, 1, 0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&x.silu()?)?;
        let h = self.conv2.forward(&h.silu()?)?;
        Ok((x + h)?)
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    conv_in: Conv1d,
    stages: Vec<(ResUnit, Conv1d)>,
    conv_out: Conv1d,
}

#[derive(Debug, Clone)]
struct Decoder {
    conv_in: Conv1d,
    /// Applied deepest first: upsample then residual unit.
    stages: Vec<(Conv1d, usize, ResUnit)>,
    conv_out: Conv1d,
}

/// Two affine layers with a SiLU between, latent → 12 chroma bins.
#[derive(Debug, Clone)]
pub struct Projector {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Projector {
    pub fn new(p: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(p, &format!("{name}.fc1"), input, hidden)?,
            fc2: Linear::new(p, &format!("{name}.fc2"), hidden, crate::audio::CHROMA_BINS)?,
        })
    }

    /// `(B, frames, channels)` → `(B, frames, 12)`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(z)?.silu()?)
    }
}

/// Strided convolutional stack over the waveform producing patch logits.
#[derive(Debug, Clone)]
pub struct Discriminator {
    layers: Vec<Conv1d>,
    head: Conv1d,
}

impl Discriminator {
    pub fn new(p: &mut ParamStore, name: &str, ch: usize) -> Result<Self> {
        let layers = vec![
            Conv1d::weight_normed(p, &format!("{name}.c0"), 1, ch, 15, 1, 7)?,
            Conv1d::weight_normed(p, &format!("{name}.c1"), ch, 2 * ch, 15, 4, 7)?,
            Conv1d::weight_normed(p, &format!("{name}.c2"), 2 * ch, 2 * ch, 15, 4, 7)?,
        ];
        let head = Conv1d::weight_normed(p, &format!("{name}.head"), 2 * ch, 1, 3, 1, 1)?;
        Ok(Self { layers, head })
    }

    /// `(B, 1, T)` → `(B, 1, T')` logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.layers {
            h = leaky_relu(&l.forward(&h)?, 0.2)?;
        }
        self.head.forward(&h)
    }
}

/// Encoder output for one clip; `pad` zeros were appended before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub mu: LatentTensor,
    pub logvar: LatentTensor,
    pub pad: usize,
}

/// Convolutional VAE with a latent projector and a waveform discriminator.
/// Generator-side weights live in `gen`, discriminator weights in `disc`.
#[derive(Debug, Clone)]
pub struct SemanticVae {
    pub config: VaeConfig,
    pub gen: ParamStore,
    pub disc: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    pub projector: Projector,
    pub discriminator: Discriminator,
}

impl SemanticVae {
    pub fn new(config: VaeConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut gen = ParamStore::new(dtype, seed);
        let mut disc = ParamStore::new(dtype, seed);
        let n = config.downsample_factors.len();
        let lc = config.latent_channels;

        let conv_in = Conv1d::weight_normed(&mut gen, "enc.conv_in", 1, config.channels(0), 7, 1, 3)?;
        let mut stages = Vec::with_capacity(n);
        for (i, &f) in config.downsample_factors.iter().enumerate() {
            let res = ResUnit::new(&mut gen, &format!("enc.res{i}"), config.channels(i))?;
            let down = Conv1d::weight_normed(&mut gen, &format!("enc.down{i}"), config.channels(i), config.channels(i + 1), f, f, 0)?;
            stages.push((res, down));
        }
        let conv_out = Conv1d::weight_normed(&mut gen, "enc.conv_out", config.channels(n), 2 * lc, 3, 1, 1)?;
        let encoder = Encoder { conv_in, stages, conv_out };

        let dconv_in = Conv1d::weight_normed(&mut gen, "dec.conv_in", lc, config.channels(n), 3, 1, 1)?;
        let mut dstages = Vec::with_capacity(n);
        for (i, &f) in config.downsample_factors.iter().enumerate().rev() {
            let up = Conv1d::weight_normed(&mut gen, &format!("dec.up{i}"), config.channels(i + 1), config.channels(i) * f, 3, 1, 1)?;
            let res = ResUnit::new(&mut gen, &format!("dec.res{i}"), config.channels(i))?;
            dstages.push((up, f, res));
        }
        let dconv_out = Conv1d::weight_normed(&mut gen, "dec.conv_out", config.channels(0), 1, 7, 1, 3)?;
        let decoder = Decoder { conv_in: dconv_in, stages: dstages, conv_out: dconv_out };

        let projector = Projector::new(&mut gen, "proj", lc, config.projector_hidden)?;
        let discriminator = Discriminator::new(&mut disc, "disc", config.disc_channels)?;
        Ok(Self { config, gen, disc, encoder, decoder, projector, discriminator })
    }

    pub fn dtype(&self) -> DType {
        self.gen.dtype()
    }

    /// `(B, 1, T)` with `T` a multiple of the total downsample →
    /// `(mu, logvar)`, each `(B, latent_channels, T / total)`.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, c, t) = x.dims3()?;
        let total = self.config.total_downsample();
        if c != 1 || t % total != 0 || t == 0 {
            return Err(Error::ShapeMismatch(format!("encoder input (·, {c}, {t}) is not mono with length a multiple of {total}")));
        }
        let e = &self.encoder;
        let mut h = e.conv_in.forward(x)?;
        for (res, down) in &e.stages {
            h = down.forward(&res.forward(&h)?.silu()?)?;
        }
        let out = e.conv_out.forward(&h.silu()?)?;
        let lc = self.config.latent_channels;
        let mu = out.narrow(1, 0, lc)?;
        // Smooth bound: a hard clamp has zero gradient and strands outliers.
        let logvar = ((out.narrow(1, lc, lc)? / LOGVAR_BOUND)?.tanh()? * LOGVAR_BOUND)?;
        Ok((mu, logvar))
    }

    /// `(B, latent_channels, F)` → `(B, 1, F · total)`. The output is linear;
    /// [`SemanticVae::decode`] clamps to [-1, 1]. A tanh head saturates in
    /// f32 after a loss spike and then passes exactly zero gradient.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        let (_, c, _) = z.dims3()?;
        if c != self.config.latent_channels {
            return Err(Error::ShapeMismatch(format!(
                "latent has {c} channels, decoder expects {}",
                self.config.latent_channels
            )));
        }
        let d = &self.decoder;
        let mut h = d.conv_in.forward(z)?;
        for (up, f, res) in &d.stages {
            h = pixel_shuffle_1d(&up.forward(&h.silu()?)?, *f)?;
            h = res.forward(&h)?;
        }
        Ok(d.conv_out.forward(&h.silu()?)?)
    }

    /// Right-pads the clip to a multiple of the total downsample and encodes.
    pub fn encode(&self, clip: &AudioClip) -> Result<Encoded> {
        let (x, pad) = self.clip_tensor(clip)?;
        let (mu, logvar) = self.encode_tensor(&x)?;
        let fr = self.config.frame_rate();
        Ok(Encoded { mu: LatentTensor::from_tensor(&mu, 0, fr)?, logvar: LatentTensor::from_tensor(&logvar, 0, fr)?, pad })
    }

    /// Waveform of exactly `frames × total_downsample` samples.
    pub fn decode(&self, z: &LatentTensor) -> Result<AudioClip> {
        if z.channels != self.config.latent_channels {
            return Err(Error::ShapeMismatch(format!(
                "latent has {} channels, decoder expects {}",
                z.channels, self.config.latent_channels
            )));
        }
        let y = self.decode_tensor(&z.to_tensor(self.dtype())?)?.clamp(-1.0, 1.0)?;
        let samples = y.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NumericalDivergence("decoder produced non-finite samples".into()));
        }
        AudioClip::new(samples, self.config.sample_rate)
    }

    /// Decodes and drops the `pad` samples recorded at encode time.
    pub fn decode_trimmed(&self, z: &LatentTensor, pad: usize) -> Result<AudioClip> {
        let clip = self.decode(z)?;
        let keep = clip.len().saturating_sub(pad);
        Ok(clip.slice(0, keep))
    }

    /// `(1, 1, padded_len)` and the pad length.
    pub fn clip_tensor(&self, clip: &AudioClip) -> Result<(Tensor, usize)> {
        if clip.sample_rate() != self.config.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "clip is {} Hz, VAE expects {} Hz",
                clip.sample_rate(),
                self.config.sample_rate
            )));
        }
        if clip.is_empty() {
            return Err(Error::InputTooShort("cannot encode an empty clip".into()));
        }
        let total = self.config.total_downsample();
        let padded = clip.len().div_ceil(total) * total;
        let mut v: Vec<f64> = clip.samples().iter().map(|&s| s as f64).collect();
        v.resize(padded, 0.0);
        Ok((nn::tensor_from_f64(v, &[1, 1, padded], self.dtype())?, padded - clip.len()))
    }

    pub fn num_params(&self) -> usize {
        self.gen.num_params()
    }
}
