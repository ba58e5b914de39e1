use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::{flow_match_loss, select_condition, AccompDit, CondModality, DitConfig};
use crate::checkpoint::{self, CheckpointMeta};
use crate::embed::StyleEmbedding;
use crate::error::{Error, Result};
use crate::nn::{self, stream_rng, Adam, AdamConfig};
use crate::structure::ManifestRecord;
use crate::vae::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Sft,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Sft => "sft",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DitTrainConfig {
    pub pretrain_steps: u64,
    pub sft_epochs: u64,
    pub batch_size: usize,
    /// Items per length bucket, in batches.
    pub bucket_batches: usize,
    /// Longer latents are cut to a random window of this many frames; 0
    /// keeps whole sequences.
    pub crop_frames: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for DitTrainConfig {
    fn default() -> Self {
        Self { pretrain_steps: 1000, sft_epochs: 10, batch_size: 4, bucket_batches: 4, crop_frames: 256, seed: 0, adam: AdamConfig { lr: 1e-4, ..AdamConfig::default() } }
    }
}

impl DitTrainConfig {
    /// Settings paired with [`DitConfig::toy`](super::DitConfig::toy).
    pub fn toy() -> Self {
        Self { pretrain_steps: 500, sft_epochs: 2, batch_size: 4, seed: 3, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, ..Self::default() }
    }
}

/// One training sequence: a scaled latent and its two style embeddings.
#[derive(Debug, Clone)]
pub struct DitExample {
    pub id: String,
    pub latent: LatentTensor,
    pub text: StyleEmbedding,
    pub audio: Option<StyleEmbedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    /// Ids of the examples in the batch.
    pub examples: Vec<String>,
    pub modalities: Vec<CondModality>,
}

/// Rows a phase trains on: every row for pretraining, retained rows for
/// fine-tuning.
pub fn phase_rows(records: &[ManifestRecord], phase: Phase) -> Result<Vec<&ManifestRecord>> {
    let rows: Vec<&ManifestRecord> = records.iter().filter(|r| phase == Phase::Pretrain || r.retained).collect();
    if rows.is_empty() {
        return Err(Error::EmptyTrainingSet(match phase {
            Phase::Pretrain => "the manifest has no rows".into(),
            Phase::Sft => "fine-tuning needs retained rows and the manifest has none".into(),
        }));
    }
    Ok(rows)
}

/// Batches of one epoch: a seeded shuffle, sorted by length within buckets
/// of `bucket_batches · batch_size` items, split, then the batch order is
/// shuffled again.
pub fn epoch_batches(lengths: &[usize], batch_size: usize, bucket_batches: usize, seed: u64, stream: &str, epoch: u64) -> Vec<Vec<usize>> {
    let mut rng = stream_rng(seed, stream, epoch);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    let bucket = (batch_size * bucket_batches.max(1)).max(1);
    let mut batches = Vec::new();
    for chunk in order.chunks(bucket) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| (lengths[i], i));
        batches.extend(chunk.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

/// Weights, optimizer state and counters of a DiT run. The step counter
/// alone determines noise, timesteps, conditioning and batch order.
#[derive(Debug, Clone)]
pub struct DitTrainer {
    pub model: AccompDit,
    pub train: DitTrainConfig,
    pub step: u64,
    pub phase: Phase,
    /// Steps taken in the current phase.
    pub phase_step: u64,
    pub latent_scale: f64,
    pub vae_hash: Option<String>,
    adam: Adam,
}

impl DitTrainer {
    pub fn new(model: AccompDit, train: DitTrainConfig, latent_scale: f64) -> Result<Self> {
        if train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(Self { adam: Adam::new(train.adam), model, train, step: 0, phase: Phase::Pretrain, phase_step: 0, latent_scale, vae_hash: None })
    }

    /// Switches phase; the per-phase counter restarts.
    pub fn enter_phase(&mut self, phase: Phase) {
        if phase != self.phase {
            self.phase = phase;
            self.phase_step = 0;
        }
    }

    /// Batches per epoch for a dataset of `n` items.
    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        epoch_batches(&vec![0; n], self.train.batch_size, self.train.bucket_batches, 0, "count", 0).len() as u64
    }

    /// Runs `steps` updates of the current phase over `data`.
    pub fn run(&mut self, data: &[DitExample], steps: u64, mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        if data.is_empty() {
            return Err(Error::EmptyTrainingSet(format!("no examples for the {} phase", self.phase.as_str())));
        }
        let lengths: Vec<usize> = data.iter().map(|d| d.latent.frames).collect();
        let per_epoch = self.steps_per_epoch(data.len());
        let stream = format!("dit-epoch-{}", self.phase.as_str());
        let mut logs = Vec::with_capacity(steps as usize);
        let mut cached: Option<(u64, Vec<Vec<usize>>)> = None;
        for _ in 0..steps {
            let epoch = self.phase_step / per_epoch;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, epoch_batches(&lengths, self.train.batch_size, self.train.bucket_batches, self.train.seed, &stream, epoch)));
            }
            let batch = &cached.as_ref().unwrap().1[(self.phase_step % per_epoch) as usize];
            let items: Vec<&DitExample> = batch.iter().map(|&i| &data[i]).collect();
            let log = self.train_step(&items)?;
            on_step(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn train_step(&mut self, batch: &[&DitExample]) -> Result<StepLog> {
        let cfg = &self.model.config;
        let step = self.step;
        let mut rng = stream_rng(self.train.seed, "dit-step", step);
        let dtype = self.model.dtype();
        let c = cfg.latent_channels;
        let crop = self.train.crop_frames;
        let mut windows = Vec::with_capacity(batch.len());
        for d in batch {
            if d.latent.channels != c {
                return Err(Error::ShapeMismatch(format!("latent `{}` has {} channels, model expects {c}", d.id, d.latent.channels)));
            }
            let frames = d.latent.frames;
            let (start, len) = if crop > 0 && frames > crop { (rng.random_range(0..=frames - crop), crop) } else { (0, frames) };
            windows.push(&d.latent.values[start * c..(start + len) * c]);
        }
        let fmax = windows.iter().map(|w| w.len() / c).max().unwrap_or(0);
        if fmax == 0 {
            return Err(Error::InputTooShort("empty latent in batch".into()));
        }
        let mut x1 = Vec::with_capacity(batch.len() * fmax * c);
        let mut mask = Vec::with_capacity(batch.len() * fmax);
        let mut conds = Vec::with_capacity(batch.len());
        for (d, w) in batch.iter().zip(&windows) {
            let frames = w.len() / c;
            x1.extend(*w);
            x1.extend(std::iter::repeat_n(0.0, (fmax - frames) * c));
            mask.extend((0..fmax).map(|f| if f < frames { 1.0 } else { 0.0 }));
            let t = rng.random::<f64>();
            conds.push(select_condition(&d.text, d.audio.as_ref(), cfg.modality_ratio, cfg.cfg_dropout_prob, t, &mut rng));
        }
        let b = batch.len();
        let x1 = nn::tensor_from_f64(x1, &[b, fmax, c], dtype)?;
        let eps = nn::randn(&[b, fmax, c], dtype, &mut rng)?;
        let padded = windows.iter().any(|w| w.len() / c != fmax);
        let mask_t = if padded { Some(nn::tensor_from_f64(mask, &[b, fmax], dtype)?) } else { None };
        let loss = flow_match_loss(&self.model, &x1, &eps, &conds, mask_t.as_ref())?;
        let value = nn::scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NumericalDivergence(format!("DiT step {step}: flow-matching loss is {value}")));
        }
        self.adam.step(&self.model.params, &loss.backward()?)?;
        self.step += 1;
        self.phase_step += 1;
        Ok(StepLog {
            step,
            phase: self.phase,
            loss: value,
            examples: batch.iter().map(|d| d.id.clone()).collect(),
            modalities: conds.iter().map(|c| c.modality).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = self.model.params.export("dit.");
        let (opt, opt_steps) = self.adam.export("opt.");
        tensors.extend(opt);
        let mut meta = CheckpointMeta::new("dit", serde_json::to_value(&self.model.config)?);
        meta.seeds.insert("train".into(), self.train.seed);
        meta.seeds.insert("text_hash".into(), crate::embed::TEXT_HASH_SEED);
        meta.seeds.insert("projection".into(), crate::embed::PROJECTION_SEED);
        meta.extra.insert("train".into(), serde_json::to_string(&self.train)?);
        meta.extra.insert("step".into(), self.step.to_string());
        meta.extra.insert("phase".into(), self.phase.as_str().into());
        meta.extra.insert("phase_step".into(), self.phase_step.to_string());
        meta.extra.insert("opt_steps".into(), opt_steps.to_string());
        meta.extra.insert("latent_scale".into(), format!("{:e}", self.latent_scale));
        if let Some(h) = &self.vae_hash {
            meta.extra.insert("vae_hash".into(), h.clone());
        }
        checkpoint::save(path, &meta, &tensors)
    }

    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (meta, tensors) = load_parts(path)?;
        let bad = |d: String| Error::Checkpoint { path: path.to_path_buf(), detail: d };
        let get = |k: &str| meta.extra.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let model = model_from_parts(path, &meta, &tensors)?;
        let train: DitTrainConfig = serde_json::from_str(get("train")?)?;
        let latent_scale: f64 = get("latent_scale")?.parse().map_err(|_| bad("bad latent_scale".into()))?;
        let mut t = Self::new(model, train.clone(), latent_scale)?;
        t.step = num("step")?;
        t.phase_step = num("phase_step")?;
        t.phase = match get("phase")?.as_str() {
            "sft" => Phase::Sft,
            _ => Phase::Pretrain,
        };
        t.adam = Adam::import(train.adam, "opt.", &tensors, num("opt_steps")?);
        t.vae_hash = meta.extra.get("vae_hash").cloned();
        Ok(t)
    }
}

fn load_parts(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, Tensor>)> {
    let (meta, tensors) = checkpoint::load(path)?;
    if meta.kind != "dit" {
        return Err(Error::Checkpoint { path: path.to_path_buf(), detail: format!("expected a dit checkpoint, found `{}`", meta.kind) });
    }
    Ok((meta, tensors))
}

fn model_from_parts(path: &Path, meta: &CheckpointMeta, tensors: &BTreeMap<String, Tensor>) -> Result<AccompDit> {
    let config: DitConfig = serde_json::from_value(meta.config.clone())
        .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), detail: format!("config: {e}") })?;
    let model = AccompDit::new(config, DType::F32, 0)?;
    model.params.import("dit.", tensors)?;
    Ok(model)
}

/// Inverse standard deviation of all latent values, so that scaled latents
/// have unit variance. Falls back to 1 for constant data.
pub fn latent_scale(latents: &[&LatentTensor]) -> f64 {
    let n: usize = latents.iter().map(|l| l.values.len()).sum();
    if n < 2 {
        return 1.0;
    }
    let mean = latents.iter().flat_map(|l| &l.values).sum::<f64>() / n as f64;
    let var = latents.iter().flat_map(|l| &l.values).map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var > 1e-12 {
        1.0 / var.sqrt()
    } else {
        1.0
    }
}
