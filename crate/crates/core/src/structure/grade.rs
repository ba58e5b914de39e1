use serde::{Deserialize, Serialize};

use super::CaptionRecord;
use crate::audio::{stft, AudioClip};
use crate::embed::{cosine_similarity, StyleEmbedder};
use crate::error::{Error, Result};

/// Objective audio-quality score of a clip (higher is better).
pub trait QualityScorer: Send + Sync {
    fn score(&self, clip: &AudioClip) -> f64;
    fn id(&self) -> String;
}

/// Text-audio agreement score of a caption and its clip (higher is better).
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, caption: &str, clip: &AudioClip) -> f64;
    fn id(&self) -> String;
}

/// Spectral-flatness quality proxy: mean over non-silent frames of
/// `-10·log10(flatness)`, capped at 60 dB. Tonal content scores high,
/// broadband noise (the typical separation artifact) scores near zero.
#[derive(Debug, Clone)]
pub struct FlatnessQuality {
    pub frame_size: usize,
}

impl Default for FlatnessQuality {
    fn default() -> Self {
        Self { frame_size: 1024 }
    }
}

impl QualityScorer for FlatnessQuality {
    fn score(&self, clip: &AudioClip) -> f64 {
        let frame = self.frame_size.min(clip.len().next_power_of_two() / 2).max(2);
        let Ok(spec) = stft(clip, frame, frame / 2) else {
            return 0.0;
        };
        let mut total = 0.0;
        let mut counted = 0usize;
        for f in 0..spec.frames {
            let power: Vec<f64> = spec.frame(f).iter().map(|x| x.norm_sqr()).collect();
            let mean = power.iter().sum::<f64>() / power.len() as f64;
            if mean <= 1e-12 {
                continue;
            }
            let floor = mean * 1e-12;
            let log_mean = power.iter().map(|p| (p + floor).ln()).sum::<f64>() / power.len() as f64;
            let flatness = (log_mean.exp() / mean).clamp(1e-6, 1.0);
            total += -10.0 * flatness.log10();
            counted += 1;
        }
        if counted == 0 {
            0.0
        } else {
            total / counted as f64
        }
    }

    fn id(&self) -> String {
        format!("flatness-quality-{}", self.frame_size)
    }
}

/// Cosine between caption and clip in a joint embedding space.
pub struct EmbedderSimilarity<'a> {
    pub embedder: &'a dyn StyleEmbedder,
}

impl SimilarityScorer for EmbedderSimilarity<'_> {
    fn score(&self, caption: &str, clip: &AudioClip) -> f64 {
        cosine_similarity(&self.embedder.embed_text(caption), &self.embedder.embed_audio(clip))
    }

    fn id(&self) -> String {
        format!("embedder-cosine:{}", self.embedder.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedSegment {
    pub record: CaptionRecord,
    pub quality_score: f64,
    pub similarity_score: f64,
    pub combined_rank_score: f64,
    pub retained: bool,
}

/// How retained segments are chosen after grading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stratification {
    /// Keep the top fraction by combined rank score.
    TopFraction { fraction: f64 },
    /// Keep segments at or above both raw-score cutoffs.
    DualThreshold { min_quality: f64, min_similarity: f64 },
}

impl Default for Stratification {
    fn default() -> Self {
        Stratification::TopFraction { fraction: 0.2 }
    }
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 0.0 {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

/// Mean of the per-batch min-max-normalized columns. A constant column
/// normalizes to 0.5.
pub fn combine_scores(quality: &[f64], similarity: &[f64]) -> Vec<f64> {
    min_max_normalize(quality)
        .into_iter()
        .zip(min_max_normalize(similarity))
        .map(|(q, s)| (q + s) / 2.0)
        .collect()
}

fn segment_name(record: &CaptionRecord) -> String {
    format!("{}@{:.3}s", record.segment.track_id, record.segment.start_s)
}

/// Scores every record, combines the scores across the batch and applies
/// `stratification`.
pub fn grade_segments(
    records: Vec<CaptionRecord>,
    clips: &[AudioClip],
    quality: &dyn QualityScorer,
    similarity: &dyn SimilarityScorer,
    stratification: Stratification,
) -> Result<Vec<GradedSegment>> {
    if records.is_empty() {
        return Err(Error::InsufficientSamples("grading needs at least one record".into()));
    }
    if records.len() != clips.len() {
        return Err(Error::ShapeMismatch(format!("{} records but {} clips", records.len(), clips.len())));
    }
    let mut q = Vec::with_capacity(records.len());
    let mut s = Vec::with_capacity(records.len());
    for (rec, clip) in records.iter().zip(clips) {
        let qs = quality.score(clip);
        let ss = similarity.score(&rec.caption, clip);
        if !qs.is_finite() || !ss.is_finite() {
            return Err(Error::ScorerFailure(segment_name(rec)));
        }
        q.push(qs);
        s.push(ss);
    }
    let combined = combine_scores(&q, &s);
    let graded = records
        .into_iter()
        .enumerate()
        .map(|(i, record)| GradedSegment {
            record,
            quality_score: q[i],
            similarity_score: s[i],
            combined_rank_score: combined[i],
            retained: false,
        })
        .collect();
    stratify(graded, stratification)
}

pub fn stratify(graded: Vec<GradedSegment>, stratification: Stratification) -> Result<Vec<GradedSegment>> {
    match stratification {
        Stratification::TopFraction { fraction } => stratify_top_fraction(graded, fraction),
        Stratification::DualThreshold { min_quality, min_similarity } => Ok(graded
            .into_iter()
            .map(|mut g| {
                g.retained = g.quality_score >= min_quality && g.similarity_score >= min_similarity;
                g
            })
            .collect()),
    }
}

/// Number of items kept out of `n`: `max(1, floor(fraction · n))`, or 0 for
/// an empty batch.
pub fn retain_count(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // the epsilon keeps products like 0.2 · 10 from flooring to 1
    (((fraction * n as f64) + 1e-9).floor() as usize).clamp(1, n)
}

/// Flags the top `retain_count` items by combined rank score. Ties break by
/// track id, then start time, ascending. Input order is preserved.
pub fn stratify_top_fraction(mut graded: Vec<GradedSegment>, fraction: f64) -> Result<Vec<GradedSegment>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let keep = retain_count(graded.len(), fraction);
    let mut order: Vec<usize> = (0..graded.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&graded[a], &graded[b]);
        y.combined_rank_score
            .total_cmp(&x.combined_rank_score)
            .then_with(|| x.record.segment.track_id.cmp(&y.record.segment.track_id))
            .then_with(|| x.record.segment.start_s.total_cmp(&y.record.segment.start_s))
    });
    graded.iter_mut().for_each(|g| g.retained = false);
    for &i in &order[..keep] {
        graded[i].retained = true;
    }
    Ok(graded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{SegmentLabel, StructuredSegment, TagSet};
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(track: &str, start: f64) -> CaptionRecord {
        CaptionRecord {
            segment: StructuredSegment { track_id: track.into(), start_s: start, end_s: start + 10.0, label: SegmentLabel::Verse },
            tags: TagSet::default(),
            caption: format!("{track} {start}"),
        }
    }

    fn graded(scores: &[f64]) -> Vec<GradedSegment> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &c)| GradedSegment {
                record: record(&format!("t{i:02}"), 0.0),
                quality_score: c,
                similarity_score: c,
                combined_rank_score: c,
                retained: false,
            })
            .collect()
    }

    /// Scorers reading precomputed values keyed by the clip's first sample.
    struct Table(Vec<f64>);
    impl QualityScorer for Table {
        fn score(&self, clip: &AudioClip) -> f64 {
            self.0[clip.samples()[0] as usize]
        }
        fn id(&self) -> String {
            "table".into()
        }
    }
    impl SimilarityScorer for Table {
        fn score(&self, _: &str, clip: &AudioClip) -> f64 {
            self.0[clip.samples()[0] as usize]
        }
        fn id(&self) -> String {
            "table".into()
        }
    }

    fn index_clips(n: usize) -> Vec<AudioClip> {
        (0..n).map(|i| AudioClip::new(vec![i as f32; 4], 8000).unwrap()).collect()
    }

    #[test]
    fn singleton_batch_scores_half() {
        let out = grade_segments(vec![record("a", 0.0)], &index_clips(1), &Table(vec![3.0]), &Table(vec![-1.0]), Stratification::default()).unwrap();
        assert_eq!(out[0].combined_rank_score, 0.5);
        assert!(out[0].retained);
    }

    #[test]
    fn dominating_segment_scores_one() {
        let recs = vec![record("a", 0.0), record("b", 0.0)];
        let out = grade_segments(recs, &index_clips(2), &Table(vec![5.0, 1.0]), &Table(vec![0.9, 0.2]), Stratification::default()).unwrap();
        assert_eq!(out[0].combined_rank_score, 1.0);
        assert_eq!(out[1].combined_rank_score, 0.0);
    }

    #[test]
    fn combined_scores_match_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 40.0).collect();
        let s: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let recs = (0..10).map(|i| record(&format!("t{i}"), 0.0)).collect();
        let out = grade_segments(recs, &index_clips(10), &Table(q.clone()), &Table(s.clone()), Stratification::default()).unwrap();
        let (qmin, qmax) = (q.iter().cloned().fold(f64::MAX, f64::min), q.iter().cloned().fold(f64::MIN, f64::max));
        let (smin, smax) = (s.iter().cloned().fold(f64::MAX, f64::min), s.iter().cloned().fold(f64::MIN, f64::max));
        let mut expected = Vec::new();
        for i in 0..10 {
            expected.push(((q[i] - qmin) / (qmax - qmin) + (s[i] - smin) / (smax - smin)) / 2.0);
        }
        for i in 0..10 {
            assert!((out[i].combined_rank_score - expected[i]).abs() < 1e-12);
        }
        let mut got_order: Vec<usize> = (0..10).collect();
        got_order.sort_by(|&a, &b| out[b].combined_rank_score.total_cmp(&out[a].combined_rank_score));
        let mut want_order: Vec<usize> = (0..10).collect();
        want_order.sort_by(|&a, &b| expected[b].total_cmp(&expected[a]));
        assert_eq!(got_order, want_order);
        assert_eq!(out.iter().filter(|g| g.retained).count(), 2);
    }

    #[test]
    fn nan_scores_name_the_segment() {
        let err = grade_segments(vec![record("bad", 2.0)], &index_clips(1), &Table(vec![f64::NAN]), &Table(vec![0.0]), Stratification::default()).unwrap_err();
        match err {
            Error::ScorerFailure(name) => assert!(name.contains("bad")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn retain_counts() {
        assert_eq!(retain_count(10, 0.2), 2);
        assert_eq!(retain_count(3, 0.2), 1);
        assert_eq!(retain_count(0, 0.2), 0);
        assert_eq!(retain_count(10, 0.3), 3);
        assert_eq!(retain_count(7, 1.0), 7);
    }

    #[test]
    fn ten_to_two() {
        let out = stratify_top_fraction(graded(&[0.1, 0.9, 0.3, 0.8, 0.2, 0.4, 0.5, 0.6, 0.0, 0.7]), 0.2).unwrap();
        let kept: Vec<usize> = (0..10).filter(|&i| out[i].retained).collect();
        assert_eq!(kept, vec![1, 3]);
    }

    #[test]
    fn three_items_keep_one() {
        let out = stratify_top_fraction(graded(&[0.1, 0.2, 0.3]), 0.2).unwrap();
        assert_eq!(out.iter().filter(|g| g.retained).count(), 1);
        assert!(out[2].retained);
    }

    #[test]
    fn ties_break_by_track_then_start() {
        let mut g = graded(&[0.5; 5]);
        g[0].record.segment.track_id = "zz".into();
        g[3].record.segment.track_id = "aa".into();
        g[3].record.segment.start_s = 30.0;
        g[4].record.segment.track_id = "aa".into();
        g[4].record.segment.start_s = 10.0;
        for _ in 0..3 {
            let out = stratify_top_fraction(g.clone(), 0.2).unwrap();
            let kept: Vec<usize> = (0..5).filter(|&i| out[i].retained).collect();
            assert_eq!(kept, vec![4]);
        }
    }

    #[test]
    fn empty_input_is_empty_output() {
        assert!(stratify_top_fraction(Vec::new(), 0.2).unwrap().is_empty());
        assert!(stratify_top_fraction(Vec::new(), 0.0).is_err());
    }

    #[test]
    fn dual_threshold_mode() {
        let mut g = graded(&[0.1, 0.5, 0.9]);
        g[2].similarity_score = -1.0;
        let out = stratify(g, Stratification::DualThreshold { min_quality: 0.4, min_similarity: 0.0 }).unwrap();
        assert_eq!(out.iter().map(|x| x.retained).collect::<Vec<_>>(), vec![false, true, false]);
    }

    #[test]
    fn flatness_prefers_tones_over_noise() {
        let tone = AudioClip::from_fn(8000, 8000, |t| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = AudioClip::new((0..8000).map(|_| rng.random::<f32>() - 0.5).collect(), 8000).unwrap();
        let q = FlatnessQuality::default();
        assert!(q.score(&tone) > q.score(&noise) + 10.0);
        assert_eq!(q.score(&AudioClip::silence(8000, 8000)), 0.0);
    }

    proptest! {
        #[test]
        fn raising_quality_never_lowers_the_combined_score(
            q in proptest::collection::vec(-5.0f64..5.0, 2..12),
            s in proptest::collection::vec(-1.0f64..1.0, 12),
            idx in 0usize..12,
            bump in 0.0f64..10.0,
        ) {
            let n = q.len();
            let idx = idx % n;
            let s = &s[..n];
            let before = combine_scores(&q, s)[idx];
            let mut q2 = q.clone();
            q2[idx] += bump;
            let after = combine_scores(&q2, s)[idx];
            prop_assert!(after >= before - 1e-12);
        }
    }
}
