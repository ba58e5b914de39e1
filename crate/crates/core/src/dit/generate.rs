use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sample, AccompDit, DitTrainer};
use crate::audio::AudioClip;
use crate::embed::StyleEmbedder;
use crate::error::{Error, Result};
use crate::vae::{LatentTensor, SemanticVae};

pub const MIN_DURATION_S: f64 = 1.0;
pub const MAX_DURATION_S: f64 = 30.0;

/// A trained DiT plus what it needs at inference time.
#[derive(Debug, Clone)]
pub struct Generator {
    pub model: AccompDit,
    pub latent_scale: f64,
    pub vae_hash: Option<String>,
}

impl Generator {
    /// Loads a DiT checkpoint. When `vae_hash` is given it must match the
    /// hash recorded at training time unless `allow_vae_mismatch` is set.
    pub fn load(path: impl AsRef<Path>, vae_hash: Option<&str>, allow_vae_mismatch: bool) -> Result<Self> {
        let path = path.as_ref();
        let t = DitTrainer::resume(path)?;
        if let (Some(want), Some(have)) = (vae_hash, t.vae_hash.as_deref()) {
            if want != have && !allow_vae_mismatch {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    detail: format!("trained against VAE {have}, given VAE {want}"),
                });
            }
        }
        Ok(Self { model: t.model, latent_scale: t.latent_scale, vae_hash: t.vae_hash })
    }

    /// Text → style → guided sampling → decode. Output length is
    /// `round(duration_s · frame_rate) · total_downsample` samples.
    pub fn generate(
        &self,
        text: &str,
        duration_s: f64,
        vae: &SemanticVae,
        embedder: &dyn StyleEmbedder,
        steps: usize,
        cfg_scale: f64,
        seed: u64,
    ) -> Result<AudioClip> {
        if !(MIN_DURATION_S..=MAX_DURATION_S).contains(&duration_s) {
            return Err(Error::DurationPolicy(format!(
                "requested {duration_s} s; durations must lie in [{MIN_DURATION_S}, {MAX_DURATION_S}] s"
            )));
        }
        let cfg = &self.model.config;
        if cfg.latent_channels != vae.config.latent_channels {
            return Err(Error::ShapeMismatch(format!(
                "DiT works on {} latent channels, VAE on {}",
                cfg.latent_channels, vae.config.latent_channels
            )));
        }
        if embedder.dim() != cfg.style_dim {
            return Err(Error::ShapeMismatch(format!("embedder has {} dims, DiT expects {}", embedder.dim(), cfg.style_dim)));
        }
        let frames = (duration_s * vae.config.frame_rate()).round() as usize;
        let style = embedder.embed_text(text);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample(&self.model, Some(style.values()), frames, cfg.latent_channels, steps, cfg_scale, self.model.dtype(), &mut rng)?;
        let latent = LatentTensor::new(
            frames,
            cfg.latent_channels,
            x.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?,
            vae.config.frame_rate(),
        )?
        .scaled(1.0 / self.latent_scale);
        vae.decode(&latent)
    }
}
