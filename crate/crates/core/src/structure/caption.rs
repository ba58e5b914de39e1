use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StructuredSegment;
use crate::audio::{chromagram, stft, AudioClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagDimension {
    Genre,
    Mood,
    Instrument,
    Scene,
    Region,
    Topic,
}

impl TagDimension {
    /// Fixed caption order.
    pub const ALL: [TagDimension; 6] = [
        TagDimension::Genre,
        TagDimension::Mood,
        TagDimension::Instrument,
        TagDimension::Scene,
        TagDimension::Region,
        TagDimension::Topic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TagDimension::Genre => "genre",
            TagDimension::Mood => "mood",
            TagDimension::Instrument => "instrument",
            TagDimension::Scene => "scene",
            TagDimension::Region => "region",
            TagDimension::Topic => "topic",
        }
    }
}

impl fmt::Display for TagDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagDimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::SchemaViolation(format!("unknown tag dimension `{s}`")))
    }
}

/// Tag lists for the six dimensions; all six keys are always present when
/// serialized.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSet {
    pub genre: Vec<String>,
    pub mood: Vec<String>,
    pub instrument: Vec<String>,
    pub scene: Vec<String>,
    pub region: Vec<String>,
    pub topic: Vec<String>,
}

impl TagSet {
    pub fn get(&self, dim: TagDimension) -> &[String] {
        match dim {
            TagDimension::Genre => &self.genre,
            TagDimension::Mood => &self.mood,
            TagDimension::Instrument => &self.instrument,
            TagDimension::Scene => &self.scene,
            TagDimension::Region => &self.region,
            TagDimension::Topic => &self.topic,
        }
    }

    pub fn get_mut(&mut self, dim: TagDimension) -> &mut Vec<String> {
        match dim {
            TagDimension::Genre => &mut self.genre,
            TagDimension::Mood => &mut self.mood,
            TagDimension::Instrument => &mut self.instrument,
            TagDimension::Scene => &mut self.scene,
            TagDimension::Region => &mut self.region,
            TagDimension::Topic => &mut self.topic,
        }
    }

    pub fn is_empty(&self) -> bool {
        TagDimension::ALL.iter().all(|&d| self.get(d).is_empty())
    }

    /// Validates a raw tagger response: exactly the six dimension keys.
    pub fn from_raw(raw: RawTags) -> Result<Self> {
        let mut tags = TagSet::default();
        let mut seen = 0;
        for (key, values) in raw {
            let dim: TagDimension = key.parse()?;
            *tags.get_mut(dim) = values;
            seen += 1;
        }
        if seen != TagDimension::ALL.len() {
            return Err(Error::SchemaViolation(format!("tagger returned {seen} of 6 dimensions")));
        }
        Ok(tags)
    }
}

/// Untyped tagger output, validated by [`TagSet::from_raw`].
pub type RawTags = BTreeMap<String, Vec<String>>;

/// First step of captioning: tag-level attributes per dimension.
pub trait Tagger: Send + Sync {
    fn tag(&self, clip: &AudioClip) -> Result<RawTags>;
    fn id(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub segment: StructuredSegment,
    pub tags: TagSet,
    pub caption: String,
}

/// Caption used when every dimension is empty.
pub const EMPTY_CAPTION: &str = "Instrumental music.";

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

fn starts_with_vowel(s: &str) -> bool {
    s.starts_with(['a', 'e', 'i', 'o', 'u', 'A', 'E', 'I', 'O', 'U'])
}

/// Second step of captioning: a fixed template, one clause per non-empty
/// dimension in the order genre, mood, instrument, scene, region, topic.
pub fn synthesize_caption(tags: &TagSet) -> String {
    if tags.is_empty() {
        return EMPTY_CAPTION.to_string();
    }
    let mut out = if tags.genre.is_empty() {
        "A piece".to_string()
    } else {
        let genres = join_list(&tags.genre);
        let article = if starts_with_vowel(&genres) { "An" } else { "A" };
        format!("{article} {genres} piece")
    };
    let mut first = true;
    let mut clause = |out: &mut String, text: String| {
        out.push_str(if first { " " } else { ", " });
        out.push_str(&text);
        first = false;
    };
    if !tags.mood.is_empty() {
        let moods = join_list(&tags.mood);
        let article = if starts_with_vowel(&moods) { "an" } else { "a" };
        clause(&mut out, format!("with {article} {moods} mood"));
    }
    if !tags.instrument.is_empty() {
        clause(&mut out, format!("featuring {}", join_list(&tags.instrument)));
    }
    if !tags.scene.is_empty() {
        clause(&mut out, format!("suited to {}", join_list(&tags.scene)));
    }
    if !tags.region.is_empty() {
        clause(&mut out, format!("with {} influences", join_list(&tags.region)));
    }
    if !tags.topic.is_empty() {
        clause(&mut out, format!("about {}", join_list(&tags.topic)));
    }
    out.push('.');
    out
}

/// Two-step captioning: tag, validate, then synthesize.
pub fn caption_segment(clip: &AudioClip, segment: &StructuredSegment, tagger: &dyn Tagger) -> Result<CaptionRecord> {
    if clip.is_empty() {
        return Err(Error::InvalidArgument(format!("empty clip for track `{}`", segment.track_id)));
    }
    let tags = TagSet::from_raw(tagger.tag(clip)?)?;
    let caption = synthesize_caption(&tags);
    Ok(CaptionRecord { segment: segment.clone(), tags, caption })
}

pub const GENRE_VOCAB: [&str; 4] = ["ambient", "classical", "electronic", "pop"];
pub const MOOD_VOCAB: [&str; 3] = ["calm", "energetic", "uplifting"];
pub const INSTRUMENT_VOCAB: [&str; 4] = ["bass", "drums", "piano", "synthesizer"];

/// Descriptors the rule tagger reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipDescriptors {
    /// Mean normalized entropy of the chroma energy distribution, in `[0, 1]`.
    pub chroma_entropy: f64,
    /// Mean spectral centroid in Hz.
    pub centroid_hz: f64,
    pub rms_mean: f64,
    /// Coefficient of variation of the frame RMS envelope.
    pub rms_cv: f64,
}

impl ClipDescriptors {
    pub fn measure(clip: &AudioClip) -> Result<Self> {
        let frame = ((clip.sample_rate() / 16) as usize).next_power_of_two().min(clip.len().next_power_of_two() / 2).max(2);
        if clip.len() < frame {
            return Err(Error::InputTooShort(format!("{} samples", clip.len())));
        }
        let hop = frame / 2;
        let chroma = chromagram(clip, frame, hop)?;
        let spec = stft(clip, frame, hop)?;
        let mut entropy = 0.0;
        let mut voiced = 0usize;
        for row in chroma.rows() {
            let total: f64 = row.iter().map(|v| v * v).sum();
            if total > 0.0 {
                let h: f64 = row.iter().map(|v| v * v / total).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
                entropy += h / (12f64).ln();
                voiced += 1;
            }
        }
        let chroma_entropy = if voiced > 0 { entropy / voiced as f64 } else { 0.0 };
        let (mut cnum, mut cden) = (0.0, 0.0);
        for f in 0..spec.frames {
            for (k, x) in spec.frame(f).iter().enumerate() {
                let m = x.norm();
                cnum += m * spec.bin_frequency(k, clip.sample_rate());
                cden += m;
            }
        }
        let centroid_hz = if cden > 0.0 { cnum / cden } else { 0.0 };
        let rms: Vec<f64> = (0..spec.frames)
            .map(|f| {
                let chunk = &clip.samples()[f * hop..f * hop + frame];
                (chunk.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / frame as f64).sqrt()
            })
            .collect();
        let rms_mean = rms.iter().sum::<f64>() / rms.len() as f64;
        let var = rms.iter().map(|r| (r - rms_mean).powi(2)).sum::<f64>() / rms.len() as f64;
        let rms_cv = if rms_mean > 0.0 { var.sqrt() / rms_mean } else { 0.0 };
        Ok(Self { chroma_entropy, centroid_hz, rms_mean, rms_cv })
    }
}

/// Deterministic tagger over chroma entropy, spectral centroid and energy
/// envelope. Scene, region and topic are left empty.
#[derive(Debug, Clone, Default)]
pub struct RuleTagger;

impl RuleTagger {
    pub fn tags_for(d: &ClipDescriptors) -> TagSet {
        let mut tags = TagSet::default();
        if d.rms_mean == 0.0 {
            return tags;
        }
        let genre = if d.chroma_entropy < 0.35 && d.centroid_hz < 1200.0 {
            "ambient"
        } else if d.chroma_entropy < 0.35 {
            "classical"
        } else if d.chroma_entropy > 0.75 && d.centroid_hz > 1500.0 {
            "electronic"
        } else {
            "pop"
        };
        let mood = if d.rms_cv > 0.5 {
            "energetic"
        } else if d.rms_mean < 0.15 {
            "calm"
        } else {
            "uplifting"
        };
        let instrument = if d.chroma_entropy > 0.75 {
            "drums"
        } else if d.centroid_hz < 400.0 {
            "bass"
        } else if d.centroid_hz < 1200.0 {
            "piano"
        } else {
            "synthesizer"
        };
        tags.genre.push(genre.into());
        tags.mood.push(mood.into());
        tags.instrument.push(instrument.into());
        tags
    }
}

impl Tagger for RuleTagger {
    fn tag(&self, clip: &AudioClip) -> Result<RawTags> {
        let tags = if clip.is_silent() { TagSet::default() } else { Self::tags_for(&ClipDescriptors::measure(clip)?) };
        Ok(TagDimension::ALL.iter().map(|&d| (d.as_str().to_string(), tags.get(d).to_vec())).collect())
    }

    fn id(&self) -> String {
        "rule-tagger-v1".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::SegmentLabel;
    use std::f64::consts::PI;

    fn seg() -> StructuredSegment {
        StructuredSegment { track_id: "t".into(), start_s: 0.0, end_s: 1.0, label: SegmentLabel::Verse }
    }

    fn tags(genre: &[&str], mood: &[&str], instrument: &[&str]) -> TagSet {
        let v = |x: &[&str]| x.iter().map(|s| s.to_string()).collect();
        TagSet { genre: v(genre), mood: v(mood), instrument: v(instrument), ..Default::default() }
    }

    #[test]
    fn golden_caption() {
        assert_eq!(
            synthesize_caption(&tags(&["ambient"], &["calm"], &["piano"])),
            "An ambient piece with a calm mood, featuring piano."
        );
    }

    #[test]
    fn empty_tags_use_fallback() {
        assert_eq!(synthesize_caption(&TagSet::default()), "Instrumental music.");
    }

    #[test]
    fn partial_and_full_templates() {
        assert_eq!(synthesize_caption(&tags(&[], &[], &["piano", "bass"])), "A piece featuring piano and bass.");
        let mut t = tags(&["pop"], &["uplifting"], &["drums", "bass", "synthesizer"]);
        t.scene.push("a road trip".into());
        t.region.push("latin".into());
        t.topic.push("summer".into());
        assert_eq!(
            synthesize_caption(&t),
            "A pop piece with an uplifting mood, featuring drums, bass and synthesizer, suited to a road trip, with latin influences, about summer."
        );
    }

    struct BadTagger;
    impl Tagger for BadTagger {
        fn tag(&self, _: &AudioClip) -> Result<RawTags> {
            let mut raw: RawTags = TagDimension::ALL.iter().map(|d| (d.to_string(), vec![])).collect();
            raw.insert("tempo".into(), vec!["fast".into()]);
            Ok(raw)
        }
        fn id(&self) -> String {
            "bad".into()
        }
    }

    #[test]
    fn unknown_dimension_is_a_schema_violation() {
        let clip = AudioClip::silence(100, 8000);
        assert!(matches!(caption_segment(&clip, &seg(), &BadTagger), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn captioning_is_deterministic_and_complete() {
        let clip = AudioClip::from_fn(16000, 8000, |t| 0.1 * (2.0 * PI * 523.25 * t).sin()).unwrap();
        let a = caption_segment(&clip, &seg(), &RuleTagger).unwrap();
        let b = caption_segment(&clip, &seg(), &RuleTagger).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.tags.genre, ["ambient"]);
        assert_eq!(a.tags.mood, ["calm"]);
        assert_eq!(a.tags.instrument, ["piano"]);
        assert_eq!(a.caption, "An ambient piece with a calm mood, featuring piano.");
        let json = serde_json::to_value(&a.tags).unwrap();
        assert_eq!(json.as_object().unwrap().len(), 6);
    }

    #[test]
    fn silence_gets_the_fallback_caption() {
        let rec = caption_segment(&AudioClip::silence(8000, 8000), &seg(), &RuleTagger).unwrap();
        assert_eq!(rec.caption, EMPTY_CAPTION);
    }

    #[test]
    fn noise_reads_as_drums() {
        let mut state = 12345u64;
        let samples = (0..16000)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f32 / (1u64 << 31) as f32 - 0.5) * 0.6
            })
            .collect();
        let clip = AudioClip::new(samples, 8000).unwrap();
        let tags = TagSet::from_raw(RuleTagger.tag(&clip).unwrap()).unwrap();
        assert_eq!(tags.instrument, ["drums"]);
        assert_eq!(tags.genre, ["electronic"]);
    }
}
