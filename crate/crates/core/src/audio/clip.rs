use std::path::Path;

use crate::error::{Error, Result};

/// Mono waveform plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    /// Builds a clip from a closure over time in seconds.
    pub fn from_fn(len: usize, sample_rate: u32, f: impl Fn(f64) -> f64) -> Result<Self> {
        let sr = sample_rate as f64;
        Self::new((0..len).map(|i| f(i as f64 / sr) as f32).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }

    /// Scales the clip down so that no amplitude exceeds 1. Clips already
    /// within range are returned unchanged.
    pub fn peak_normalized(&self) -> Self {
        let peak = self.peak();
        if peak <= 1.0 {
            return self.clone();
        }
        let g = 1.0 / peak;
        Self { samples: self.samples.iter().map(|s| s * g).collect(), sample_rate: self.sample_rate }
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }

    /// Samples `[start, end)`, with `end` clipped to the clip length.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        Self { samples: self.samples[start..end].to_vec(), sample_rate: self.sample_rate }
    }

    pub fn concat(clips: &[AudioClip]) -> Result<Self> {
        let Some(first) = clips.first() else {
            return Err(Error::InvalidArgument("cannot concatenate zero clips".into()));
        };
        if clips.iter().any(|c| c.sample_rate != first.sample_rate) {
            return Err(Error::ShapeMismatch("sample rates differ".into()));
        }
        let samples = clips.iter().flat_map(|c| c.samples.iter().copied()).collect();
        Ok(Self { samples, sample_rate: first.sample_rate })
    }

    /// Linear-interpolation resampling.
    pub fn resampled(&self, target_rate: u32) -> Result<Self> {
        if target_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if target_rate == self.sample_rate || self.samples.is_empty() {
            return Ok(Self { samples: self.samples.clone(), sample_rate: target_rate });
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let out_len = ((self.samples.len() as f64) / ratio).round() as usize;
        let last = self.samples.len() - 1;
        let samples = (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let j = (pos.floor() as usize).min(last);
                let frac = pos - j as f64;
                let a = self.samples[j] as f64;
                let b = self.samples[(j + 1).min(last)] as f64;
                (a + (b - a) * frac) as f32
            })
            .collect();
        Ok(Self { samples, sample_rate: target_rate })
    }

    /// Reads a PCM wave file (16-bit integer or 32-bit float), averaging
    /// channels to mono.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path.as_ref())?;
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f32 / 32768.0))
                .collect::<std::result::Result<_, _>>()?,
            (fmt, bits) => {
                return Err(Error::InvalidArgument(format!(
                    "{}: unsupported wave format {fmt:?}/{bits} bits",
                    path.as_ref().display()
                )))
            }
        };
        let samples = interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect();
        Self::new(samples, spec.sample_rate)
    }

    /// Reads a wave file and resamples it to `sample_rate`.
    pub fn read_wav_at(path: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        Self::read_wav(path)?.resampled(sample_rate)
    }

    /// Writes a mono 32-bit float wave file.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample(s)?;
        }
        writer.finalize()?;
        Ok(())
    }
}
