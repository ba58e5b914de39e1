//! Flow-matching diffusion transformer over VAE latents.
//!
//! Conditioning is channel concatenation of the noisy latent, a style vector
//! (text- or audio-derived, or a learned null token) and a sinusoidal
//! timestep embedding. Sampling is Euler integration with classifier-free
//! guidance.

mod config;
mod flow;
mod generate;
mod model;
mod train;

pub use config::DitConfig;
pub use flow::{flow_match_loss, interpolate, sample, select_condition};
pub use generate::{Generator, MAX_DURATION_S, MIN_DURATION_S};
pub use model::{timestep_embedding, AccompDit, CondModality, ConditionBundle, VelocityModel};
pub use train::{epoch_batches, latent_scale, phase_rows, DitExample, DitTrainConfig, DitTrainer, Phase, StepLog};
