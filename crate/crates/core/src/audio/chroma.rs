use super::{stft, AudioClip};
use crate::error::{Error, Result};

pub const CHROMA_BINS: usize = 12;

/// FFT bins below this frequency are not folded into any pitch class.
pub const CHROMA_MIN_HZ: f64 = 60.0;

/// Row-major `frames × dims` feature matrix with its frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dims: usize,
    pub values: Vec<f64>,
    pub frame_rate: f64,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dims: usize, values: Vec<f64>, frame_rate: f64) -> Result<Self> {
        if values.len() != frames * dims {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {frames}x{dims} feature matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite feature value".into()));
        }
        Ok(Self { frames, dims, values, frame_rate })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dims.max(1)).take(self.frames)
    }
}

/// Equal-tempered pitch class (C = 0) of a frequency, with A4 = 440 Hz.
pub fn pitch_class_of(freq_hz: f64) -> usize {
    let midi = 69.0 + 12.0 * (freq_hz / 440.0).log2();
    (midi.round() as i64).rem_euclid(12) as usize
}

/// 12-bin pitch-class energy per STFT frame. Nonzero frames are
/// L2-normalized; silent frames stay all-zero.
pub fn chromagram(clip: &AudioClip, frame_size: usize, hop: usize) -> Result<FeatureMatrix> {
    if clip.sample_rate() < 8000 {
        return Err(Error::InvalidArgument(format!(
            "chromagram needs a sample rate of at least 8000 Hz (got {})",
            clip.sample_rate()
        )));
    }
    let spec = stft(clip, frame_size, hop)?;
    let classes: Vec<Option<usize>> = (0..spec.bins)
        .map(|k| {
            let f = spec.bin_frequency(k, clip.sample_rate());
            (f >= CHROMA_MIN_HZ).then(|| pitch_class_of(f))
        })
        .collect();
    let mut values = vec![0.0; spec.frames * CHROMA_BINS];
    for f in 0..spec.frames {
        let row = &mut values[f * CHROMA_BINS..(f + 1) * CHROMA_BINS];
        for (x, class) in spec.frame(f).iter().zip(&classes) {
            if let Some(c) = class {
                row[*c] += x.norm_sqr();
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-10 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    FeatureMatrix::new(spec.frames, CHROMA_BINS, values, clip.sample_rate() as f64 / hop as f64)
}
