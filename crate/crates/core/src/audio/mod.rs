//! Signal-processing primitives shared by every stage: the [`AudioClip`]
//! carrier, a Hann-windowed STFT, the 12-bin chromagram and a multiscale
//! log-spectral distance.
//!
//! Everything here is a pure function of its inputs.

mod chroma;
mod clip;
mod stft;

pub use chroma::{chromagram, pitch_class_of, FeatureMatrix, CHROMA_BINS, CHROMA_MIN_HZ};
pub use clip::AudioClip;
pub use stft::{
    hann_window, multiscale_spectral_distance, stft, Spectrogram, DEFAULT_SPECTRAL_SCALES,
    SPECTRAL_EPS,
};
