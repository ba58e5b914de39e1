//! Structure-guided accompaniment generation at desk scale.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`audio`]: STFT, chromagram and spectral distances over [`audio::AudioClip`].
//! * [`structure`]: novelty segmentation, timestamp-synchronized slicing,
//!   six-dimension captioning, dual-metric grading and stratification.
//! * [`embed`]: a deterministic joint text/audio style embedder.
//! * [`vae`]: a convolutional VAE fine-tuned with a semantic alignment loss
//!   against a frozen chroma teacher.
//! * [`dit`]: a flow-matching diffusion transformer conditioned by channel
//!   concatenation, with mixed-modality training and classifier-free guidance.
//! * [`metrics`]: Fréchet distance, CLAP-style alignment and concept coverage.
//!
//! The guide in `book/` walks through each stage; its snippets run as doctests.

pub mod audio;
pub mod checkpoint;
pub mod dit;
pub mod embed;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod structure;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};

// The guide's snippets run as doctests through these empty modules.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
