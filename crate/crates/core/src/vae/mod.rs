//! Convolutional VAE with semantic regularization.
//!
//! The frozen teacher is a closed-form 25 Hz chromagram standing in for a
//! lead-sheet transcription model; a small projector maps latent frames to
//! 12 bins and is trained to align with it by cosine distance.

mod config;
mod losses;
mod model;
mod train;

pub use config::{LossWeights, VaeConfig, TEACHER_FRAME_RATE};
pub use losses::{
    adversarial_losses, align_teacher, cosine_alignment_loss, hinge_d_loss, hinge_g_loss, kl_loss, semantic_loss,
    teacher_batch, teacher_features, SpectralLoss,
};
pub use model::{reparameterize, Discriminator, Encoded, LatentTensor, Projector, SemanticVae};
pub use train::{semantic_alignment, LossBreakdown, VaeTrainConfig, VaeTrainer};
