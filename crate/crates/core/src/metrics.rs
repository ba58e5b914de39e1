//! Objective metrics: Fréchet distance over embedding Gaussians, text-audio
//! alignment and concept coverage.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::embed::{cosine_similarity, StyleEmbedder, StyleEmbedding};
use crate::error::{Error, Result};
use crate::structure::TagDimension;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

/// Sample mean and unbiased covariance, symmetrized as `(C + Cᵀ)/2`.
pub fn fit_gaussian(embeddings: &[Vec<f64>]) -> Result<GaussianFit> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::InsufficientSamples(format!("a Gaussian fit needs at least 2 vectors, got {n}")));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::ShapeMismatch("embeddings differ in dimension".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| embeddings[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianFit { mean, covariance, n })
}

fn eigen_checked(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let e = SymmetricEigen::new(m);
    if e.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("eigendecomposition produced non-finite values".into()));
    }
    Ok(e)
}

/// Square root of a symmetric PSD matrix; negative eigenvalues are clamped.
fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = eigen_checked((m + m.transpose()) * 0.5)?;
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&e.eigenvectors * s * e.eigenvectors.transpose())
}

/// `tr((A^{1/2} B A^{1/2})^{1/2})`, which equals `tr((AB)^{1/2})`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ra = sqrt_psd(a)?;
    let m = &ra * b * &ra;
    let e = eigen_checked((&m + m.transpose()) * 0.5)?;
    Ok(e.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum())
}

/// `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2(Σ1Σ2)^{1/2})`, clamped at 0. The trace
/// term is averaged over both factor orders so the result is exactly
/// symmetric.
pub fn frechet_distance(g1: &GaussianFit, g2: &GaussianFit) -> Result<f64> {
    if g1.mean.len() != g2.mean.len() {
        return Err(Error::ShapeMismatch(format!("dimensions {} and {}", g1.mean.len(), g2.mean.len())));
    }
    let diff = (&g1.mean - &g2.mean).norm_squared();
    let cross = 0.5 * (trace_sqrt_product(&g1.covariance, &g2.covariance)? + trace_sqrt_product(&g2.covariance, &g1.covariance)?);
    let d = diff + g1.covariance.trace() + g2.covariance.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::NumericalFailure(format!("Fréchet distance evaluated to {d}")));
    }
    Ok(d.max(0.0))
}

fn embed_all(clips: &[AudioClip], embedder: &dyn StyleEmbedder) -> Vec<Vec<f64>> {
    clips.iter().map(|c| embedder.embed_audio(c).values().to_vec()).collect()
}

/// Fréchet distance between Gaussian fits of the two sets' audio embeddings.
pub fn fad(generated: &[AudioClip], reference: &[AudioClip], embedder: &dyn StyleEmbedder) -> Result<f64> {
    fad_from_embeddings(&embed_all(generated, embedder), &embed_all(reference, embedder))
}

pub fn fad_from_embeddings(generated: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&fit_gaussian(generated)?, &fit_gaussian(reference)?)
}

/// Mean text-audio cosine over caption/clip pairs.
pub fn clap_score(pairs: &[(String, AudioClip)], embedder: &dyn StyleEmbedder) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientSamples("alignment score needs at least one pair".into()));
    }
    let sum: f64 = pairs
        .iter()
        .map(|(text, clip)| cosine_similarity(&embedder.embed_text(text), &embedder.embed_audio(clip)))
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// Presence probability of a tagged concept in a clip.
pub trait ConceptJudge: Send + Sync {
    fn probability(&self, clip: &AudioClip, dimension: TagDimension, tag: &str) -> f64;
    fn id(&self) -> String;
}

/// `sigmoid(scale · cos(embed_text(tag), embed_audio(clip)))`.
pub struct EmbeddingJudge<'a> {
    pub embedder: &'a dyn StyleEmbedder,
    pub scale: f64,
}

impl<'a> EmbeddingJudge<'a> {
    pub fn new(embedder: &'a dyn StyleEmbedder) -> Self {
        Self { embedder, scale: 10.0 }
    }

    pub fn probability_for(&self, audio: &StyleEmbedding, tag: &str) -> f64 {
        let c = cosine_similarity(&self.embedder.embed_text(tag), audio);
        1.0 / (1.0 + (-self.scale * c).exp())
    }
}

impl ConceptJudge for EmbeddingJudge<'_> {
    fn probability(&self, clip: &AudioClip, _: TagDimension, tag: &str) -> f64 {
        self.probability_for(&self.embedder.embed_audio(clip), tag)
    }

    fn id(&self) -> String {
        format!("embedding-judge:{}:scale{}", self.embedder.id(), self.scale)
    }
}

/// Fraction of (clip, concept) pairs the judge puts above 0.5.
pub fn concept_coverage(items: &[(&AudioClip, &[(TagDimension, String)])], judge: &dyn ConceptJudge) -> Result<f64> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for (clip, concepts) in items {
        for (dim, tag) in concepts.iter() {
            total += 1;
            if judge.probability(clip, *dim, tag) > 0.5 {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::NoConcepts);
    }
    Ok(hits as f64 / total as f64)
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fad: f64,
    pub clap: f64,
    pub ccs: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub embedder_id: String,
    pub judge_id: String,
    pub config_hash: String,
}
