use super::StructuredSegment;
use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Cuts the instrumental track at the segment timestamps. Each clip covers
/// samples `[round(start_s·sr), round(end_s·sr))`; tails past the end of the
/// instrumental are clipped and `end_s` updated to match.
pub fn slice_by_boundaries(
    instrumental: &AudioClip,
    segments: &[StructuredSegment],
) -> Result<Vec<(StructuredSegment, AudioClip)>> {
    let sr = instrumental.sample_rate() as f64;
    let len = instrumental.len();
    segments
        .iter()
        .map(|seg| {
            let start = (seg.start_s * sr).round() as usize;
            let end = ((seg.end_s * sr).round() as usize).min(len);
            if start >= len || start >= end {
                return Err(Error::TimestampMisalignment {
                    track_id: seg.track_id.clone(),
                    detail: format!(
                        "segment [{:.3}, {:.3}) s lies beyond the instrumental's {:.3} s",
                        seg.start_s,
                        seg.end_s,
                        instrumental.duration_seconds()
                    ),
                });
            }
            let mut seg = seg.clone();
            if end as f64 != (seg.end_s * sr).round() {
                seg.end_s = end as f64 / sr;
            }
            Ok((seg, instrumental.slice(start, end)))
        })
        .collect()
}

/// Drops items shorter than `min_s` and truncates those longer than `max_s`
/// to their first `max_s` seconds. Order is preserved.
pub fn apply_duration_policy(
    items: Vec<(StructuredSegment, AudioClip)>,
    min_s: f64,
    max_s: f64,
) -> Vec<(StructuredSegment, AudioClip)> {
    items
        .into_iter()
        .filter(|(_, clip)| clip.duration_seconds() >= min_s)
        .map(|(mut seg, clip)| {
            if clip.duration_seconds() > max_s {
                let keep = (max_s * clip.sample_rate() as f64).round() as usize;
                seg.end_s = seg.start_s + max_s;
                (seg, clip.slice(0, keep))
            } else {
                (seg, clip)
            }
        })
        .collect()
}
