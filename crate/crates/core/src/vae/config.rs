use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate of the chroma teacher, in frames per second.
pub const TEACHER_FRAME_RATE: u32 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub adv: f64,
    pub sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { recon: 1.0, kl: 1e-4, adv: 0.1, sem: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub downsample_factors: Vec<usize>,
    pub latent_channels: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub sample_rate: u32,
    pub projector_hidden: usize,
    pub disc_channels: usize,
    /// Frame sizes of the multi-resolution spectral reconstruction loss.
    pub stft_scales: Vec<usize>,
    /// Magnitude floor inside the log of the spectral loss.
    pub spectral_floor: f64,
    /// Generator steps before the adversarial terms switch on.
    pub adv_start_step: u64,
    pub weights: LossWeights,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl VaeConfig {
    pub fn desk() -> Self {
        Self {
            downsample_factors: vec![4, 4, 4],
            latent_channels: 64,
            base_channels: 32,
            max_channels: 256,
            sample_rate: 24_000,
            projector_hidden: 128,
            disc_channels: 16,
            stft_scales: vec![256, 512, 1024],
            spectral_floor: 1e-3,
            adv_start_step: 0,
            weights: LossWeights::default(),
        }
    }

    /// Full-size geometry: 24 kHz audio at a 25 Hz, 64-channel latent.
    pub fn paper() -> Self {
        Self {
            downsample_factors: vec![4, 5, 6, 8],
            latent_channels: 64,
            base_channels: 128,
            max_channels: 2048,
            sample_rate: 24_000,
            projector_hidden: 128,
            disc_channels: 32,
            stft_scales: vec![512, 1024, 2048],
            spectral_floor: 1e-3,
            adv_start_step: 0,
            weights: LossWeights::default(),
        }
    }

    /// Overfitting scale: 8 kHz audio, a 25 Hz 16-channel latent and a few
    /// thousand parameters. Used by the convergence tests.
    pub fn toy() -> Self {
        Self {
            downsample_factors: vec![4, 5, 4, 4],
            latent_channels: 16,
            base_channels: 8,
            max_channels: 32,
            sample_rate: 8000,
            projector_hidden: 32,
            disc_channels: 4,
            stft_scales: vec![64, 128, 256],
            ..Self::desk()
        }
    }

    pub fn total_downsample(&self) -> usize {
        self.downsample_factors.iter().product()
    }

    /// Latent frames for a clip of `samples`; the encoder right-pads to a
    /// whole frame.
    pub fn latent_frames(&self, samples: usize) -> usize {
        samples.div_ceil(self.total_downsample())
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.total_downsample() as f64
    }

    /// Channel width after stage `i` (stage 0 is the input convolution).
    pub fn channels(&self, i: usize) -> usize {
        (self.base_channels << i).min(self.max_channels.max(self.base_channels))
    }

    pub fn validate(&self) -> Result<()> {
        if self.downsample_factors.is_empty() || self.downsample_factors.contains(&0) {
            return Err(Error::Config("downsample_factors must be non-empty and positive".into()));
        }
        if self.latent_channels == 0 || self.base_channels == 0 || self.projector_hidden == 0 || self.disc_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let total = self.total_downsample();
        if self.sample_rate as usize % total != 0 {
            return Err(Error::Config(format!(
                "sample_rate {} is not divisible by the total downsample {total}; the latent frame rate must be an integer",
                self.sample_rate
            )));
        }
        if self.sample_rate % TEACHER_FRAME_RATE != 0 || self.sample_rate < 8000 {
            return Err(Error::Config(format!(
                "sample_rate {} must be at least 8000 and a multiple of {TEACHER_FRAME_RATE}",
                self.sample_rate
            )));
        }
        if self.stft_scales.iter().any(|&s| s < 4 || !s.is_power_of_two()) {
            return Err(Error::Config("stft_scales must be powers of two ≥ 4".into()));
        }
        if !(self.spectral_floor > 0.0) {
            return Err(Error::Config("spectral_floor must be positive".into()));
        }
        let w = &self.weights;
        if [w.recon, w.kl, w.adv, w.sem].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}
