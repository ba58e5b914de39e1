use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::novelty::{compute_ssm, detect_boundaries, novelty_curve};
use crate::audio::{chromagram, AudioClip, FeatureMatrix};
use crate::error::{Error, Result};

/// Closed structural vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentLabel {
    Intro,
    Verse,
    Chorus,
    Bridge,
    Inst,
    Outro,
    Unknown,
}

impl SegmentLabel {
    pub const ALL: [SegmentLabel; 7] = [
        SegmentLabel::Intro,
        SegmentLabel::Verse,
        SegmentLabel::Chorus,
        SegmentLabel::Bridge,
        SegmentLabel::Inst,
        SegmentLabel::Outro,
        SegmentLabel::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentLabel::Intro => "intro",
            SegmentLabel::Verse => "verse",
            SegmentLabel::Chorus => "chorus",
            SegmentLabel::Bridge => "bridge",
            SegmentLabel::Inst => "inst",
            SegmentLabel::Outro => "outro",
            SegmentLabel::Unknown => "unknown",
        }
    }
}

impl fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::SchemaViolation(format!("unknown segment label `{s}`")))
    }
}

/// A labeled, time-bounded section of one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredSegment {
    pub track_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub label: SegmentLabel,
}

impl StructuredSegment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Anything that turns a mixed track into structural segments.
pub trait Segmenter: Send + Sync {
    fn segment(&self, track_id: &str, mixed: &AudioClip) -> Result<Vec<StructuredSegment>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    /// Chroma hop in seconds; the frame is the next power of two ≥ 2 hops.
    pub hop_s: f64,
    pub kernel_half_width_s: f64,
    /// Relative peak threshold for [`detect_boundaries`].
    pub threshold_ratio: f64,
    /// Absolute novelty floor below which no peak counts.
    pub min_peak: f64,
    /// Shortest allowed segment; also the minimum gap between boundaries.
    pub min_segment_s: f64,
    /// Average-linkage cosine above which segment clusters merge.
    pub cluster_similarity: f64,
    pub max_clusters: usize,
    /// First/last segments shorter than this become intro/outro.
    pub intro_outro_max_s: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            hop_s: 0.25,
            kernel_half_width_s: 4.0,
            threshold_ratio: 0.3,
            min_peak: 0.1,
            min_segment_s: 5.0,
            cluster_similarity: 0.9,
            max_clusters: 4,
            intro_outro_max_s: 15.0,
        }
    }
}

/// Chroma → SSM → Foote novelty → peaks → labeled segments.
#[derive(Debug, Clone, Default)]
pub struct NoveltySegmenter {
    pub config: SegmenterConfig,
}

impl NoveltySegmenter {
    pub fn new(config: SegmenterConfig) -> Self {
        Self { config }
    }
}

impl Segmenter for NoveltySegmenter {
    fn segment(&self, track_id: &str, mixed: &AudioClip) -> Result<Vec<StructuredSegment>> {
        segment_track(track_id, mixed, &self.config)
    }
}

struct Framing {
    hop: usize,
    frame: usize,
}

fn framing(config: &SegmenterConfig, sample_rate: u32) -> Framing {
    let hop = ((config.hop_s * sample_rate as f64).round() as usize).max(1);
    Framing { hop, frame: (2 * hop).next_power_of_two() }
}

/// Segments a mixed track so that the result partitions `[0, duration]`.
pub fn segment_track(track_id: &str, mixed: &AudioClip, config: &SegmenterConfig) -> Result<Vec<StructuredSegment>> {
    let duration = mixed.duration_seconds();
    let single = |label| vec![StructuredSegment { track_id: track_id.to_string(), start_s: 0.0, end_s: duration, label }];
    let Framing { hop, frame } = framing(config, mixed.sample_rate());
    if duration < 2.0 * config.min_segment_s || mixed.len() < frame + 2 * hop {
        return Ok(single(SegmentLabel::Unknown));
    }
    let chroma = chromagram(mixed, frame, hop)?;
    let ssm = compute_ssm(&chroma)?;
    let w = ((config.kernel_half_width_s / config.hop_s).round() as usize).max(1);
    let mut novelty = novelty_curve(&ssm, w)?;
    novelty.iter_mut().filter(|v| **v < config.min_peak).for_each(|v| *v = 0.0);
    let min_gap = ((config.min_segment_s / config.hop_s).round() as usize).max(1);
    let sr = mixed.sample_rate() as f64;
    // midpoint between the centers of frames k-1 and k
    let time_of = |k: usize| (k as f64 * hop as f64 + (frame as f64 - hop as f64) / 2.0) / sr;
    let times: Vec<f64> = detect_boundaries(&novelty, config.threshold_ratio, min_gap)?
        .into_iter()
        .map(time_of)
        .filter(|&t| t >= config.min_segment_s && duration - t >= config.min_segment_s)
        .collect();

    let mut edges = Vec::with_capacity(times.len() + 2);
    edges.push(0.0);
    edges.extend(times);
    edges.push(duration);
    let mut segments: Vec<StructuredSegment> = edges
        .windows(2)
        .map(|e| StructuredSegment { track_id: track_id.to_string(), start_s: e[0], end_s: e[1], label: SegmentLabel::Unknown })
        .collect();
    let labels = label_segments(&segments, &chroma, hop, frame, sr, config);
    for (seg, label) in segments.iter_mut().zip(labels) {
        seg.label = label;
    }
    Ok(segments)
}

/// Mean chroma of the frames whose centers fall inside each segment.
fn segment_means(segments: &[StructuredSegment], chroma: &FeatureMatrix, hop: usize, frame: usize, sr: f64) -> Vec<Vec<f64>> {
    segments
        .iter()
        .map(|seg| {
            let mut acc = vec![0.0; chroma.dims];
            let mut count = 0usize;
            for (f, row) in chroma.rows().enumerate() {
                let center = (f * hop + frame / 2) as f64 / sr;
                if center >= seg.start_s && center < seg.end_s {
                    acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    count += 1;
                }
            }
            if count > 0 {
                acc.iter_mut().for_each(|a| *a /= count as f64);
            }
            acc
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Average-linkage agglomerative clustering by cosine similarity. Merges
/// while the best pair is above `threshold` or more than `max_clusters`
/// remain. Returns a cluster id per item, ids in order of first appearance.
pub fn cluster_features(items: &[Vec<f64>], threshold: f64, max_clusters: usize) -> Vec<usize> {
    let mut clusters: Vec<Vec<usize>> = (0..items.len()).map(|i| vec![i]).collect();
    loop {
        if clusters.len() <= 1 {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut s = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        s += cosine(&items[i], &items[j]);
                    }
                }
                s /= (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, a, b));
                }
            }
        }
        let (s, a, b) = best.expect("at least two clusters");
        if s < threshold && clusters.len() <= max_clusters.max(1) {
            break;
        }
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
    }
    clusters.sort_by_key(|c| *c.iter().min().unwrap());
    let mut ids = vec![0; items.len()];
    for (id, c) in clusters.iter().enumerate() {
        for &i in c {
            ids[i] = id;
        }
    }
    ids
}

const OCCUPANCY_LABELS: [SegmentLabel; 4] = [SegmentLabel::Verse, SegmentLabel::Chorus, SegmentLabel::Bridge, SegmentLabel::Inst];

fn label_segments(
    segments: &[StructuredSegment],
    chroma: &FeatureMatrix,
    hop: usize,
    frame: usize,
    sr: f64,
    config: &SegmenterConfig,
) -> Vec<SegmentLabel> {
    let means = segment_means(segments, chroma, hop, frame, sr);
    let valid: Vec<usize> = (0..segments.len()).filter(|&i| means[i].iter().any(|&v| v > 0.0)).collect();
    let mut labels = vec![SegmentLabel::Unknown; segments.len()];
    if valid.is_empty() {
        return labels;
    }
    let items: Vec<Vec<f64>> = valid.iter().map(|&i| means[i].clone()).collect();
    let ids = cluster_features(&items, config.cluster_similarity, config.max_clusters.min(OCCUPANCY_LABELS.len()));
    let n_clusters = ids.iter().max().map_or(0, |m| m + 1);
    // rank clusters by segment count, then total duration, then first appearance
    let mut stats: Vec<(usize, usize, f64)> = (0..n_clusters).map(|c| (c, 0, 0.0)).collect();
    for (k, &c) in ids.iter().enumerate() {
        stats[c].1 += 1;
        stats[c].2 += segments[valid[k]].duration_s();
    }
    stats.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    let mut label_of = vec![SegmentLabel::Unknown; n_clusters];
    for (rank, (c, _, _)) in stats.iter().enumerate() {
        label_of[*c] = OCCUPANCY_LABELS[rank.min(OCCUPANCY_LABELS.len() - 1)];
    }
    for (k, &i) in valid.iter().enumerate() {
        labels[i] = label_of[ids[k]];
    }
    if segments.len() >= 2 {
        if segments[0].duration_s() < config.intro_outro_max_s {
            labels[0] = SegmentLabel::Intro;
        }
        let last = segments.len() - 1;
        if segments[last].duration_s() < config.intro_outro_max_s {
            labels[last] = SegmentLabel::Outro;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::tone_sections as sections;

    const SR: u32 = 8000;

    fn assert_partition(segs: &[StructuredSegment], duration: f64) {
        assert_eq!(segs[0].start_s, 0.0);
        assert_eq!(segs.last().unwrap().end_s, duration);
        for w in segs.windows(2) {
            assert_eq!(w[0].end_s, w[1].start_s);
            assert!(w[0].start_s < w[0].end_s);
        }
    }

    #[test]
    fn two_sections_give_one_boundary_near_the_seam() {
        let clip = sections(&[(220.0, 20.0), (329.63, 20.0)], SR);
        let segs = segment_track("t", &clip, &SegmenterConfig::default()).unwrap();
        assert_eq!(segs.len(), 2, "{segs:?}");
        assert!((segs[0].end_s - 20.0).abs() <= 1.0, "{segs:?}");
        assert_partition(&segs, 40.0);
        assert_ne!(segs[0].label, segs[1].label);
    }

    #[test]
    fn homogeneous_tone_is_one_segment() {
        let clip = sections(&[(261.63, 30.0)], SR);
        let segs = segment_track("t", &clip, &SegmenterConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_s, segs[0].end_s), (0.0, 30.0));
    }

    #[test]
    fn aba_sections_share_a_label() {
        let clip = sections(&[(220.0, 20.0), (311.13, 20.0), (220.0, 20.0)], SR);
        let segs = segment_track("t", &clip, &SegmenterConfig::default()).unwrap();
        assert_eq!(segs.len(), 3, "{segs:?}");
        assert_partition(&segs, 60.0);
        assert_eq!(segs[0].label, segs[2].label);
        assert_ne!(segs[0].label, segs[1].label);
        // cluster-assignment oracle on the per-section mean chroma
        let means: Vec<Vec<f64>> = [(0.0, 20.0), (20.0, 40.0), (40.0, 60.0)]
            .iter()
            .map(|&(a, b)| {
                let part = clip.slice((a * SR as f64) as usize, (b * SR as f64) as usize);
                let c = chromagram(&part, 4096, 2000).unwrap();
                (0..12).map(|d| c.rows().map(|r| r[d]).sum::<f64>() / c.frames as f64).collect()
            })
            .collect();
        let ids = cluster_features(&means, 0.9, 4);
        assert_eq!(ids[0], ids[2]);
        assert_ne!(ids[0], ids[1]);
    }

    #[test]
    fn short_tracks_fall_back_to_one_unknown_segment() {
        let clip = sections(&[(220.0, 6.0)], SR);
        let segs = segment_track("t", &clip, &SegmenterConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].label, SegmentLabel::Unknown);
    }

    #[test]
    fn silence_is_labeled_unknown() {
        let clip = AudioClip::silence(30 * SR as usize, SR);
        let segs = segment_track("t", &clip, &SegmenterConfig::default()).unwrap();
        assert!(segs.iter().all(|s| s.label == SegmentLabel::Unknown));
    }

    #[test]
    fn short_edges_become_intro_and_outro() {
        let clip = sections(&[(220.0, 8.0), (311.13, 20.0), (392.0, 20.0), (220.0, 8.0)], SR);
        let segs = segment_track("t", &clip, &SegmenterConfig::default()).unwrap();
        assert_eq!(segs.len(), 4, "{segs:?}");
        assert_eq!(segs[0].label, SegmentLabel::Intro);
        assert_eq!(segs[3].label, SegmentLabel::Outro);
    }

    #[test]
    fn clustering_caps_the_cluster_count() {
        let items: Vec<Vec<f64>> = (0..6).map(|i| { let mut v = vec![0.0; 6]; v[i] = 1.0; v }).collect();
        let ids = cluster_features(&items, 0.9, 4);
        assert_eq!(ids.iter().max().unwrap() + 1, 4);
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for l in SegmentLabel::ALL {
            assert_eq!(l.as_str().parse::<SegmentLabel>().unwrap(), l);
        }
        assert!("hook".parse::<SegmentLabel>().is_err());
    }
}
