use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CaptionRecord, GradedSegment, SegmentLabel, StructuredSegment, TagSet};
use crate::embed::{PROJECTION_SEED, TEXT_HASH_SEED};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "accomp-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// First line of every manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub text_hash_seed: u64,
    pub projection_seed: u64,
}

impl Default for ManifestHeader {
    fn default() -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            text_hash_seed: TEXT_HASH_SEED,
            projection_seed: PROJECTION_SEED,
        }
    }
}

/// One manifest row. Scores are `None` until the segment has been graded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub track_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub label: SegmentLabel,
    pub tags: TagSet,
    pub caption: String,
    pub quality_score: Option<f64>,
    pub similarity_score: Option<f64>,
    pub combined_rank_score: Option<f64>,
    pub retained: bool,
    pub audio_path: String,
}

impl ManifestRecord {
    pub fn from_caption(record: CaptionRecord, audio_path: impl Into<String>) -> Self {
        let CaptionRecord { segment, tags, caption } = record;
        Self {
            track_id: segment.track_id,
            start_s: segment.start_s,
            end_s: segment.end_s,
            label: segment.label,
            tags,
            caption,
            quality_score: None,
            similarity_score: None,
            combined_rank_score: None,
            retained: false,
            audio_path: audio_path.into(),
        }
    }

    pub fn from_graded(graded: GradedSegment, audio_path: impl Into<String>) -> Self {
        let mut out = Self::from_caption(graded.record, audio_path);
        out.quality_score = Some(graded.quality_score);
        out.similarity_score = Some(graded.similarity_score);
        out.combined_rank_score = Some(graded.combined_rank_score);
        out.retained = graded.retained;
        out
    }

    pub fn segment(&self) -> StructuredSegment {
        StructuredSegment { track_id: self.track_id.clone(), start_s: self.start_s, end_s: self.end_s, label: self.label }
    }

    pub fn caption_record(&self) -> CaptionRecord {
        CaptionRecord { segment: self.segment(), tags: self.tags.clone(), caption: self.caption.clone() }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Serializes with the fixed field order and 6-decimal floats.
    pub fn to_line(&self) -> Result<String> {
        fn float(x: f64) -> String {
            // -0.000000 and 0.000000 must not both appear for the same value
            let s = format!("{x:.6}");
            if s == "-0.000000" { "0.000000".into() } else { s }
        }
        fn opt(x: Option<f64>) -> String {
            x.map(float).unwrap_or_else(|| "null".into())
        }
        let mut line = String::from("{");
        write!(line, "\"track_id\":{}", serde_json::to_string(&self.track_id)?).unwrap();
        write!(line, ",\"start_s\":{}", float(self.start_s)).unwrap();
        write!(line, ",\"end_s\":{}", float(self.end_s)).unwrap();
        write!(line, ",\"label\":{}", serde_json::to_string(&self.label)?).unwrap();
        write!(line, ",\"tags\":{}", serde_json::to_string(&self.tags)?).unwrap();
        write!(line, ",\"caption\":{}", serde_json::to_string(&self.caption)?).unwrap();
        write!(line, ",\"quality_score\":{}", opt(self.quality_score)).unwrap();
        write!(line, ",\"similarity_score\":{}", opt(self.similarity_score)).unwrap();
        write!(line, ",\"combined_rank_score\":{}", opt(self.combined_rank_score)).unwrap();
        write!(line, ",\"retained\":{}", self.retained).unwrap();
        write!(line, ",\"audio_path\":{}", serde_json::to_string(&self.audio_path)?).unwrap();
        line.push('}');
        Ok(line)
    }
}

pub fn write_manifest<W: Write>(mut out: W, records: &[ManifestRecord]) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(&ManifestHeader::default())?)?;
    for r in records {
        writeln!(out, "{}", r.to_line()?)?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<(ManifestHeader, Vec<ManifestRecord>)> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let header: ManifestHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?)
            .map_err(|e| Error::SchemaViolation(format!("manifest header: {e}")))?,
        None => return Err(Error::SchemaViolation("empty manifest".into())),
    };
    if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
        return Err(Error::SchemaViolation(format!(
            "unsupported manifest {} v{}",
            header.format, header.version
        )));
    }
    if header.text_hash_seed != TEXT_HASH_SEED || header.projection_seed != PROJECTION_SEED {
        log::warn!("manifest was written with different embedder seeds");
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let rec: ManifestRecord = serde_json::from_str(&line?)
            .map_err(|e| Error::SchemaViolation(format!("manifest line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Ok((header, records))
}
