use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::losses::{hinge_d_loss, hinge_g_loss, kl_loss, semantic_loss, teacher_batch, teacher_features, SpectralLoss};
use super::{SemanticVae, VaeConfig};
use crate::audio::{AudioClip, FeatureMatrix};
use crate::checkpoint::{self, CheckpointMeta};
use crate::error::{Error, Result};
use crate::nn::{self, stream_rng, Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Training crop length; rounded to whole latent frames.
    pub clip_seconds: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { steps: 1000, batch_size: 4, clip_seconds: 3.0, seed: 0, adam: AdamConfig { lr: 1e-4, ..AdamConfig::default() } }
    }
}

impl VaeTrainConfig {
    /// Settings paired with [`VaeConfig::toy`]: 500 steps on 0.48 s crops.
    pub fn toy() -> Self {
        Self { steps: 500, batch_size: 4, clip_seconds: 0.48, seed: 0, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() } }
    }
}

/// Per-step loss components. `total` excludes any term whose weight is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub recon: f64,
    pub kl: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub sem: f64,
    pub total: f64,
}

/// Optimizer state and step counter around a [`SemanticVae`]. Step `k`
/// always sees the same batch and noise for a given seed, so a resumed run
/// continues the uninterrupted trace.
#[derive(Debug, Clone)]
pub struct VaeTrainer {
    pub vae: SemanticVae,
    pub train: VaeTrainConfig,
    pub step: u64,
    gen_opt: Adam,
    disc_opt: Adam,
    spectral: SpectralLoss,
}

impl VaeTrainer {
    pub fn new(vae: SemanticVae, train: VaeTrainConfig) -> Result<Self> {
        if train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let spectral = SpectralLoss::new(&vae.config.stft_scales, vae.config.spectral_floor, vae.dtype())?;
        Ok(Self { gen_opt: Adam::new(train.adam), disc_opt: Adam::new(train.adam), vae, train, step: 0, spectral })
    }

    /// Crop length in samples.
    pub fn crop_len(&self) -> usize {
        let total = self.vae.config.total_downsample();
        let want = self.train.clip_seconds * self.vae.config.sample_rate as f64 / total as f64;
        (want.round() as usize).max(1) * total
    }

    /// Clip indices of the batch used at `step`.
    pub fn batch_indices(&self, n: usize, step: u64) -> Vec<usize> {
        let bs = self.train.batch_size.min(n);
        let per_epoch = n.div_ceil(bs) as u64;
        let (epoch, within) = (step / per_epoch, (step % per_epoch) as usize);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(self.train.seed, "vae-epoch", epoch));
        order[within * bs..((within + 1) * bs).min(n)].to_vec()
    }

    fn crop(&self, clip: &AudioClip, rng: &mut rand_chacha::ChaCha8Rng) -> AudioClip {
        let len = self.crop_len();
        if clip.len() > len {
            let start = rng.random_range(0..=clip.len() - len);
            clip.slice(start, start + len)
        } else {
            let mut v = clip.samples().to_vec();
            v.resize(len, 0.0);
            AudioClip::new(v, clip.sample_rate()).expect("finite")
        }
    }

    pub fn run(&mut self, clips: &[AudioClip], steps: u64, mut on_step: impl FnMut(&LossBreakdown)) -> Result<Vec<LossBreakdown>> {
        if clips.is_empty() {
            return Err(Error::EmptyTrainingSet("no clips to train the VAE on".into()));
        }
        let mut trace = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let idx = self.batch_indices(clips.len(), self.step);
            let batch: Vec<&AudioClip> = idx.iter().map(|&i| &clips[i]).collect();
            let b = self.train_step(&batch)?;
            on_step(&b);
            trace.push(b);
        }
        Ok(trace)
    }

    /// One generator update on the weighted total followed by one
    /// discriminator update.
    pub fn train_step(&mut self, batch: &[&AudioClip]) -> Result<LossBreakdown> {
        let step = self.step;
        let mut rng = stream_rng(self.train.seed, "vae-step", step);
        let crops: Vec<AudioClip> = batch.iter().map(|c| self.crop(c, &mut rng)).collect();
        let teachers: Vec<FeatureMatrix> = crops.iter().map(teacher_features).collect::<Result<_>>()?;
        let dtype = self.vae.dtype();
        let len = self.crop_len();
        let flat: Vec<f64> = crops.iter().flat_map(|c| c.samples().iter().map(|&s| s as f64)).collect();
        let x = nn::tensor_from_f64(flat, &[crops.len(), 1, len], dtype)?;

        let (mu, logvar) = self.vae.encode_tensor(&x)?;
        let eps = nn::randn(mu.dims(), dtype, &mut rng)?;
        let z = (&mu + ((&logvar * 0.5)?.exp()? * eps)?)?;
        let xhat = self.vae.decode_tensor(&z)?;
        let mut w = self.vae.config.weights;
        let adv_on = step >= self.vae.config.adv_start_step;
        if !adv_on {
            w.adv = 0.0;
        }

        let recon = self.spectral.forward(&x, &xhat)?;
        let kl = kl_loss(&mu, &logvar)?;
        let teacher_refs: Vec<&FeatureMatrix> = teachers.iter().collect();
        let (teacher, mask) = teacher_batch(&teacher_refs, z.dim(2)?, dtype)?;
        let sem = semantic_loss(&z, &self.vae.projector, &teacher, &mask)?;
        let adv_g = hinge_g_loss(&self.vae.discriminator.forward(&xhat)?)?;

        let mut total = (&recon * w.recon)?;
        for (term, weight) in [(&kl, w.kl), (&adv_g, w.adv), (&sem, w.sem)] {
            if weight > 0.0 {
                total = (total + (term * weight)?)?;
            }
        }
        let values = [
            ("recon", nn::scalar(&recon)?),
            ("kl", nn::scalar(&kl)?),
            ("adv_g", nn::scalar(&adv_g)?),
            ("sem", nn::scalar(&sem)?),
            ("total", nn::scalar(&total)?),
        ];
        for (name, v) in values {
            if !v.is_finite() {
                return Err(Error::NumericalDivergence(format!("VAE step {step}: {name} loss is {v}")));
            }
        }
        let grads = total.backward()?;
        self.gen_opt.step(&self.vae.gen, &grads)?;

        let d_loss = hinge_d_loss(&self.vae.discriminator.forward(&x)?, &self.vae.discriminator.forward(&xhat.detach())?)?;
        let adv_d = nn::scalar(&d_loss)?;
        if !adv_d.is_finite() {
            return Err(Error::NumericalDivergence(format!("VAE step {step}: adv_d loss is {adv_d}")));
        }
        if w.adv > 0.0 {
            let grads = d_loss.backward()?;
            self.disc_opt.step(&self.vae.disc, &grads)?;
        }
        self.step += 1;
        Ok(LossBreakdown { step, recon: values[0].1, kl: values[1].1, adv_g: values[2].1, adv_d, sem: values[3].1, total: values[4].1 })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = self.vae.gen.export("gen.");
        tensors.extend(self.vae.disc.export("disc."));
        let (g, gs) = self.gen_opt.export("opt_g.");
        let (d, ds) = self.disc_opt.export("opt_d.");
        tensors.extend(g);
        tensors.extend(d);
        let mut meta = CheckpointMeta::new("vae", serde_json::to_value(&self.vae.config)?);
        meta.seeds.insert("train".into(), self.train.seed);
        meta.extra.insert("train".into(), serde_json::to_string(&self.train)?);
        meta.extra.insert("step".into(), self.step.to_string());
        meta.extra.insert("opt_g_steps".into(), gs.to_string());
        meta.extra.insert("opt_d_steps".into(), ds.to_string());
        checkpoint::save(path, &meta, &tensors)
    }

    /// Restores weights, optimizer moments and the step counter.
    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (meta, tensors) = load_vae_parts(path)?;
        let vae = vae_from_parts(path, &meta, &tensors)?;
        let bad = |d: &str| Error::Checkpoint { path: path.to_path_buf(), detail: d.to_string() };
        let train: VaeTrainConfig = serde_json::from_str(meta.extra.get("train").ok_or_else(|| bad("missing train config"))?)?;
        let num = |k: &str| -> Result<u64> {
            meta.extra.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| bad(&format!("missing `{k}`")))
        };
        let mut t = Self::new(vae, train.clone())?;
        t.step = num("step")?;
        t.gen_opt = Adam::import(train.adam, "opt_g.", &tensors, num("opt_g_steps")?);
        t.disc_opt = Adam::import(train.adam, "opt_d.", &tensors, num("opt_d_steps")?);
        Ok(t)
    }

    /// Mean frame-wise cosine between `projector(mu)` and the teacher over
    /// every valid frame of `clips`.
    pub fn semantic_alignment(&self, clips: &[AudioClip]) -> Result<f64> {
        semantic_alignment(&self.vae, clips)
    }
}

/// See [`VaeTrainer::semantic_alignment`].
pub fn semantic_alignment(vae: &SemanticVae, clips: &[AudioClip]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0.0;
    for clip in clips {
        let (x, _) = vae.clip_tensor(clip)?;
        let (mu, _) = vae.encode_tensor(&x)?;
        let teacher = teacher_features(clip)?;
        let (t, m) = teacher_batch(&[&teacher], mu.dim(2)?, vae.dtype())?;
        let pred = vae.projector.forward(&mu.transpose(1, 2)?)?;
        let dot = (&pred * &t)?.sum(D::Minus1)?;
        let pn = (pred.sqr()?.sum(D::Minus1)? + 1e-12)?.sqrt()?;
        let cos = (dot / pn)?;
        sum += nn::scalar(&(cos * &m)?.sum_all()?)?;
        count += nn::scalar(&m.sum_all()?)?;
    }
    if count == 0.0 {
        return Err(Error::FrameAlignment("no valid teacher frames in the evaluation set".into()));
    }
    Ok(sum / count)
}

fn load_vae_parts(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, Tensor>)> {
    let (meta, tensors) = checkpoint::load(path)?;
    if meta.kind != "vae" {
        return Err(Error::Checkpoint { path: path.to_path_buf(), detail: format!("expected a vae checkpoint, found `{}`", meta.kind) });
    }
    Ok((meta, tensors))
}

fn vae_from_parts(path: &Path, meta: &CheckpointMeta, tensors: &BTreeMap<String, Tensor>) -> Result<SemanticVae> {
    let config: VaeConfig = serde_json::from_value(meta.config.clone())
        .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), detail: format!("config: {e}") })?;
    let vae = SemanticVae::new(config, DType::F32, 0)?;
    vae.gen.import("gen.", tensors)?;
    vae.disc.import("disc.", tensors)?;
    Ok(vae)
}

impl SemanticVae {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (meta, tensors) = load_vae_parts(path)?;
        vae_from_parts(path, &meta, &tensors)
    }

    /// Loads and checks the compression geometry against `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &VaeConfig) -> Result<Self> {
        let path = path.as_ref();
        let vae = Self::load(path)?;
        if vae.config.downsample_factors != expected.downsample_factors
            || vae.config.latent_channels != expected.latent_channels
            || vae.config.sample_rate != expected.sample_rate
        {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                detail: format!(
                    "checkpoint geometry {:?}/{}ch/{} Hz does not match configured {:?}/{}ch/{} Hz",
                    vae.config.downsample_factors,
                    vae.config.latent_channels,
                    vae.config.sample_rate,
                    expected.downsample_factors,
                    expected.latent_channels,
                    expected.sample_rate
                ),
            });
        }
        Ok(vae)
    }
}
