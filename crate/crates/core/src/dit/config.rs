use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DitConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub latent_channels: usize,
    pub style_dim: usize,
    /// Probability of replacing the style with the learned null token.
    pub cfg_dropout_prob: f64,
    /// Probability of an audio-derived rather than text-derived style.
    pub modality_ratio: f64,
    pub sampler_steps: usize,
    pub cfg_scale: f64,
    /// Rotary position encoding on queries and keys.
    pub rope: bool,
}

impl Default for DitConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DitConfig {
    pub fn desk() -> Self {
        Self {
            hidden_dim: 128,
            num_heads: 4,
            num_layers: 4,
            latent_channels: 64,
            style_dim: 64,
            cfg_dropout_prob: 0.1,
            modality_ratio: 0.5,
            sampler_steps: 32,
            cfg_scale: 3.0,
            rope: true,
        }
    }

    /// Full-size width and depth (about 400M parameters).
    pub fn paper() -> Self {
        Self { hidden_dim: 1536, num_heads: 12, num_layers: 14, ..Self::desk() }
    }

    /// Two narrow layers over the 16-channel latent of the toy VAE.
    pub fn toy() -> Self {
        Self { hidden_dim: 32, num_heads: 2, num_layers: 2, latent_channels: 16, style_dim: 16, sampler_steps: 8, ..Self::desk() }
    }

    /// Width of the concatenated per-frame input before projection.
    pub fn input_width(&self) -> usize {
        2 * self.latent_channels + self.style_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.rope && (self.hidden_dim / self.num_heads) % 2 != 0 {
            return Err(Error::Config("rotary encoding needs an even head width".into()));
        }
        if self.latent_channels == 0 || self.latent_channels % 2 != 0 {
            return Err(Error::Config("latent_channels must be even; the timestep embedding shares its width".into()));
        }
        if self.style_dim == 0 {
            return Err(Error::Config("style_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.cfg_dropout_prob) {
            return Err(Error::Config(format!("cfg_dropout_prob {} must lie in [0, 1)", self.cfg_dropout_prob)));
        }
        if !(0.0..=1.0).contains(&self.modality_ratio) {
            return Err(Error::Config(format!("modality_ratio {} must lie in [0, 1]", self.modality_ratio)));
        }
        if self.sampler_steps == 0 {
            return Err(Error::Config("sampler_steps must be at least 1".into()));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::Config("cfg_scale must be finite".into()));
        }
        Ok(())
    }

    /// Parameters in one transformer block: two layer norms, fused QKV,
    /// output projection and a 4× feed-forward.
    pub fn block_params(&self) -> usize {
        let h = self.hidden_dim;
        12 * h * h + 13 * h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        DitConfig::desk().validate().unwrap();
        let p = DitConfig::paper();
        p.validate().unwrap();
        assert_eq!(p.input_width(), 192);
        let approx = p.num_layers * p.block_params();
        assert!((380_000_000..420_000_000).contains(&approx), "{approx}");
    }

    #[test]
    fn rejects_bad_ranges() {
        for c in [
            DitConfig { hidden_dim: 130, ..DitConfig::desk() },
            DitConfig { cfg_dropout_prob: 1.0, ..DitConfig::desk() },
            DitConfig { modality_ratio: 1.5, ..DitConfig::desk() },
            DitConfig { latent_channels: 63, ..DitConfig::desk() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
