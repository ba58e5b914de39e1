//! Deterministic joint text/audio style embedder.
//!
//! Text is embedded by signed feature hashing of its lowercase tokens; audio
//! by a fixed seeded random projection of summary statistics (chroma mean and
//! spread, log-energy envelope, spectral centroid). Both land in the same
//! unit-norm `D`-dimensional space. The two modalities share a space by
//! construction only; nothing aligns them. The [`StyleEmbedder`] trait is the
//! seam where a learned embedder plugs in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{chromagram, stft, AudioClip, CHROMA_BINS};

/// Seed of the token hash. Recorded in manifest and checkpoint headers.
pub const TEXT_HASH_SEED: u64 = 0x5EED_7E47_0000_0001;
/// Seed of the audio feature projection. Recorded alongside [`TEXT_HASH_SEED`].
pub const PROJECTION_SEED: u64 = 0x5EED_A0D1_0000_0002;
pub const DEFAULT_EMBED_DIM: usize = 64;

/// Length of the audio summary vector: chroma mean and std (12 + 12),
/// log-energy stats (4) and spectral-centroid stats (4).
pub const AUDIO_FEATURE_DIM: usize = 2 * CHROMA_BINS + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
}

/// Unit-norm style vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbedding {
    values: Vec<f64>,
    modality: Modality,
}

impl StyleEmbedding {
    /// Normalizes `values`; a zero (or non-finite) vector maps to the reserved
    /// unit vector `e₀`.
    pub fn from_raw(mut values: Vec<f64>, modality: Modality) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        } else {
            values = reserved_vector(values.len().max(1));
        }
        Self { values, modality }
    }

    pub fn reserved(dim: usize, modality: Modality) -> Self {
        Self { values: reserved_vector(dim), modality }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn negated(&self) -> Self {
        Self { values: self.values.iter().map(|v| -v).collect(), modality: self.modality }
    }
}

fn reserved_vector(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    v
}

/// Dot product of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &StyleEmbedding, b: &StyleEmbedding) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

pub trait StyleEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> StyleEmbedding;
    fn embed_audio(&self, clip: &AudioClip) -> StyleEmbedding;
    /// Identifier written into reports.
    fn id(&self) -> String;
}

/// The built-in embedder.
#[derive(Debug, Clone)]
pub struct HashProjectionEmbedder {
    dim: usize,
    projection: Vec<f64>,
}

impl Default for HashProjectionEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBED_DIM)
    }
}

impl HashProjectionEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
        let scale = 1.0 / (AUDIO_FEATURE_DIM as f64).sqrt();
        let projection = (0..dim * AUDIO_FEATURE_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self { dim, projection }
    }

    /// Summary statistics fed to the projection, or `None` for silent or
    /// too-short clips.
    pub fn audio_features(clip: &AudioClip) -> Option<Vec<f64>> {
        if clip.is_silent() {
            return None;
        }
        let (frame, hop) = analysis_frame(clip)?;
        let chroma = chromagram(clip, frame, hop).ok()?;
        let spec = stft(clip, frame, hop).ok()?;
        let mut feats = Vec::with_capacity(AUDIO_FEATURE_DIM);
        for d in 0..CHROMA_BINS {
            let col: Vec<f64> = chroma.rows().map(|r| r[d]).collect();
            feats.push(mean(&col));
        }
        for d in 0..CHROMA_BINS {
            let col: Vec<f64> = chroma.rows().map(|r| r[d]).collect();
            feats.push(std_dev(&col));
        }
        let samples = clip.samples();
        let log_energy: Vec<f64> = (0..spec.frames)
            .map(|f| {
                let chunk = &samples[f * hop..f * hop + frame];
                let power = chunk.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / frame as f64;
                // dB scaled into roughly unit range
                10.0 * (power + 1e-10).log10() / 100.0
            })
            .collect();
        let nyquist = clip.sample_rate() as f64 / 2.0;
        let centroid: Vec<f64> = (0..spec.frames)
            .map(|f| {
                let row = spec.frame(f);
                let (mut num, mut den) = (0.0, 0.0);
                for (k, x) in row.iter().enumerate() {
                    let m = x.norm();
                    num += m * spec.bin_frequency(k, clip.sample_rate());
                    den += m;
                }
                if den > 0.0 {
                    num / den / nyquist
                } else {
                    0.0
                }
            })
            .collect();
        for series in [&log_energy, &centroid] {
            feats.extend([mean(series), std_dev(series), min(series), max(series)]);
        }
        Some(feats)
    }
}

impl StyleEmbedder for HashProjectionEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> StyleEmbedding {
        let mut acc = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = seeded_hash(token.as_bytes(), TEXT_HASH_SEED);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        }
        StyleEmbedding::from_raw(acc, Modality::Text)
    }

    fn embed_audio(&self, clip: &AudioClip) -> StyleEmbedding {
        let Some(feats) = Self::audio_features(clip) else {
            log::debug!("embedding a silent or too-short clip as the reserved vector");
            return StyleEmbedding::reserved(self.dim, Modality::Audio);
        };
        let values = self
            .projection
            .chunks(AUDIO_FEATURE_DIM)
            .map(|row| row.iter().zip(&feats).map(|(w, x)| w * x).sum())
            .collect();
        StyleEmbedding::from_raw(values, Modality::Audio)
    }

    fn id(&self) -> String {
        format!("hash-projection-d{}-{:016x}-{:016x}", self.dim, TEXT_HASH_SEED, PROJECTION_SEED)
    }
}

/// Lowercased tokens split on non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// FNV-1a over the bytes, seeded through the offset basis and finished with
/// a splitmix64 avalanche.
pub fn seeded_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn analysis_frame(clip: &AudioClip) -> Option<(usize, usize)> {
    let preferred = ((clip.sample_rate() / 16) as usize).next_power_of_two();
    let frame = if clip.len() >= preferred {
        preferred
    } else {
        let p = clip.len().next_power_of_two() / 2;
        if p < 32 {
            return None;
        }
        p
    };
    Some((frame, frame / 2))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    mean(&v.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>()).sqrt()
}

fn min(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn max(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, amp: f64) -> AudioClip {
        AudioClip::from_fn(8000, 8000, |t| amp * (2.0 * PI * freq * t).sin()).unwrap()
    }

    fn unit_norm(e: &StyleEmbedding) -> bool {
        (e.values().iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6
    }

    #[test]
    fn text_embedding_is_deterministic_and_order_invariant() {
        let emb = HashProjectionEmbedder::default();
        assert_eq!(emb.embed_text("calm piano"), emb.embed_text("calm piano"));
        let a = emb.embed_text("calm piano");
        let b = emb.embed_text("piano calm");
        assert!((cosine_similarity(&a, &b) - 1.0).abs() < 1e-12);

        // hand-accumulated hashed buckets
        let mut acc = vec![0.0; 64];
        for tok in ["piano", "calm"] {
            let h = seeded_hash(tok.as_bytes(), TEXT_HASH_SEED);
            acc[(h % 64) as usize] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        let n = acc.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        for (x, y) in a.values().iter().zip(&acc) {
            assert!((x - y / n).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_caption_maps_to_reserved_vector() {
        let emb = HashProjectionEmbedder::default();
        let e = emb.embed_text("");
        assert_eq!(e.values()[0], 1.0);
        assert!(e.values()[1..].iter().all(|&v| v == 0.0));
        assert_eq!(emb.embed_text("  ,;  ").values(), e.values());
    }

    #[test]
    fn tokenization_lowercases_and_splits() {
        let toks: Vec<_> = tokenize("Calm, ambient-PIANO!").collect();
        assert_eq!(toks, ["calm", "ambient", "piano"]);
    }

    #[test]
    fn audio_embedding_is_deterministic() {
        let emb = HashProjectionEmbedder::default();
        let clip = tone(330.0, 0.5);
        assert_eq!(emb.embed_audio(&clip), emb.embed_audio(&clip));
        assert!(unit_norm(&emb.embed_audio(&clip)));
    }

    #[test]
    fn silence_maps_to_reserved_vector() {
        let emb = HashProjectionEmbedder::default();
        let e = emb.embed_audio(&AudioClip::silence(8000, 8000));
        assert_eq!(e, StyleEmbedding::reserved(64, Modality::Audio));
    }

    #[test]
    fn halving_amplitude_keeps_direction() {
        let emb = HashProjectionEmbedder::default();
        let clip = AudioClip::from_fn(8000, 8000, |t| 0.6 * (2.0 * PI * 330.0 * t).sin() + 0.3 * (2.0 * PI * 523.0 * t).sin()).unwrap();
        let half = clip.scaled(0.5);
        let fa = HashProjectionEmbedder::audio_features(&clip).unwrap();
        let fb = HashProjectionEmbedder::audio_features(&half).unwrap();
        // chroma-derived block unchanged up to f32 rounding
        for i in 0..2 * CHROMA_BINS {
            assert!((fa[i] - fb[i]).abs() < 1e-5, "feature {i}");
        }
        let cos = cosine_similarity(&emb.embed_audio(&clip), &emb.embed_audio(&half));
        assert!(cos >= 0.9, "cosine {cos}");
    }

    #[test]
    fn cosine_identity_and_antipode() {
        let emb = HashProjectionEmbedder::default();
        let a = emb.embed_text("dark synth bass");
        assert!((cosine_similarity(&a, &a) - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&a, &a.negated()) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_loop_oracle() {
        let emb = HashProjectionEmbedder::default();
        let a = emb.embed_text("bright electronic lead");
        let b = emb.embed_audio(&tone(220.0, 0.4));
        let mut dot = 0.0;
        for i in 0..64 {
            dot += a.values()[i] * b.values()[i];
        }
        assert!((cosine_similarity(&a, &b) - dot).abs() < 1e-12);
    }

    #[test]
    fn hash_is_stable() {
        // frozen: any change to the hash silently invalidates stored embeddings
        assert_eq!(seeded_hash(b"piano", TEXT_HASH_SEED), seeded_hash(b"piano", TEXT_HASH_SEED));
        assert_ne!(seeded_hash(b"piano", TEXT_HASH_SEED), seeded_hash(b"piano", TEXT_HASH_SEED + 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn embeddings_are_unit_norm(text in "[a-zA-Z ,.]{0,40}", f in 60.0f64..3000.0, amp in 0.01f64..1.0, len in 10usize..6000) {
            let emb = HashProjectionEmbedder::default();
            prop_assert!(unit_norm(&emb.embed_text(&text)));
            let clip = AudioClip::from_fn(len, 8000, |t| amp * (2.0 * PI * f * t).sin()).unwrap();
            let e = emb.embed_audio(&clip);
            prop_assert!(unit_norm(&e));
            prop_assert!(e.values().iter().all(|v| v.is_finite()));
        }

        #[test]
        fn cosine_is_symmetric_and_bounded(a in "[a-z ]{1,30}", b in "[a-z ]{1,30}") {
            let emb = HashProjectionEmbedder::default();
            let (x, y) = (emb.embed_text(&a), emb.embed_text(&b));
            let c = cosine_similarity(&x, &y);
            prop_assert_eq!(c, cosine_similarity(&y, &x));
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
