//! Seeded synthetic audio: multi-section paired tracks and short toy clips.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Concatenated pure tones at amplitude 0.5, one `(frequency_hz, seconds)`
/// pair per section.
pub fn tone_sections(sections: &[(f64, f64)], sample_rate: u32) -> AudioClip {
    let sr = sample_rate as f64;
    let mut samples = Vec::new();
    for &(freq, secs) in sections {
        let n = (secs * sr).round() as usize;
        samples.extend((0..n).map(|i| (0.5 * (2.0 * PI * freq * i as f64 / sr).sin()) as f32));
    }
    AudioClip::new(samples, sample_rate).expect("finite tones")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SectionKind {
    Tone { freq: f64 },
    Chord { root: f64 },
    Noise { seed: u64 },
}

impl SectionKind {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        // roots on the A440 equal-tempered grid between A2 and A4
        let semis = rng.random_range(0..24) as f64;
        let freq = 110.0 * 2f64.powf(semis / 12.0);
        match rng.random_range(0..5) {
            0 | 1 => SectionKind::Tone { freq },
            2 | 3 => SectionKind::Chord { root: freq },
            _ => SectionKind::Noise { seed: rng.random() },
        }
    }

    /// Renders `n` samples. Notes restart every beat so the envelope moves.
    pub fn render(&self, n: usize, sample_rate: u32) -> Vec<f32> {
        let sr = sample_rate as f64;
        let beat = 0.5;
        let env = |t: f64| {
            let phase = (t % beat) / beat;
            0.6 + 0.4 * (-4.0 * phase).exp()
        };
        match *self {
            SectionKind::Tone { freq } => (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    (0.5 * env(t) * (2.0 * PI * freq * t).sin()) as f32
                })
                .collect(),
            SectionKind::Chord { root } => {
                let partials = [root, root * 2f64.powf(4.0 / 12.0), root * 2f64.powf(7.0 / 12.0)];
                (0..n)
                    .map(|i| {
                        let t = i as f64 / sr;
                        let s: f64 = partials.iter().map(|f| (2.0 * PI * f * t).sin()).sum();
                        (0.2 * env(t) * s) as f32
                    })
                    .collect()
            }
            SectionKind::Noise { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|i| {
                        let t = i as f64 / sr;
                        (0.3 * env(t) * (rng.random::<f64>() * 2.0 - 1.0)) as f32
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCorpusConfig {
    pub tracks: usize,
    pub sample_rate: u32,
    pub min_section_s: f64,
    pub max_section_s: f64,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self { tracks: 8, sample_rate: 24_000, min_section_s: 8.0, max_section_s: 16.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub kind: SectionKind,
    pub start_s: f64,
    pub end_s: f64,
}

/// One paired track: the full mix and its instrumental stem.
#[derive(Debug, Clone)]
pub struct SyntheticTrack {
    pub track_id: String,
    pub mixed: AudioClip,
    pub instrumental: AudioClip,
    pub sections: Vec<SectionSpan>,
}

const FORMS: [&[usize]; 4] = [&[0, 1, 0, 1], &[0, 1, 0], &[0, 1, 2, 1], &[0, 1, 2]];

/// Generates `config.tracks` paired tracks. Each track follows a random form
/// such as ABA over random section kinds; the mix adds a sung-like line with
/// vibrato and syllable-rate amplitude modulation on top of the instrumental.
pub fn synth_corpus(config: &SynthCorpusConfig) -> Result<Vec<SyntheticTrack>> {
    if config.tracks == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one track".into()));
    }
    if !(config.min_section_s > 0.0 && config.max_section_s >= config.min_section_s) {
        return Err(Error::InvalidArgument(format!(
            "section length range [{}, {}] is empty",
            config.min_section_s, config.max_section_s
        )));
    }
    let sr = config.sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.tracks);
    for t in 0..config.tracks {
        let form = FORMS[rng.random_range(0..FORMS.len())];
        let distinct = form.iter().max().unwrap() + 1;
        let mut kinds: Vec<SectionKind> = Vec::with_capacity(distinct);
        while kinds.len() < distinct {
            let k = SectionKind::random(&mut rng);
            if !kinds.iter().any(|p| same_color(p, &k)) {
                kinds.push(k);
            }
        }
        let mut instrumental = Vec::new();
        let mut sections = Vec::new();
        for &slot in form {
            let secs = rng.random_range(config.min_section_s..=config.max_section_s).round().max(1.0);
            let n = (secs * sr) as usize;
            let start_s = instrumental.len() as f64 / sr;
            instrumental.extend(kinds[slot].render(n, config.sample_rate));
            sections.push(SectionSpan { kind: kinds[slot], start_s, end_s: instrumental.len() as f64 / sr });
        }
        let voice = 220.0 * 2f64.powf(rng.random_range(0..12) as f64 / 12.0);
        let mixed: Vec<f32> = instrumental
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let time = i as f64 / sr;
                let vib = 0.003 * voice / 5.0 * (2.0 * PI * 5.0 * time).sin();
                let amp = 0.15 * (0.5 + 0.5 * (2.0 * PI * 3.0 * time).sin().abs());
                x * 0.8 + (amp * (2.0 * PI * voice * time + vib * 2.0 * PI).sin()) as f32
            })
            .collect();
        out.push(SyntheticTrack {
            track_id: format!("track_{t:03}"),
            mixed: AudioClip::new(mixed, config.sample_rate)?,
            instrumental: AudioClip::new(instrumental, config.sample_rate)?,
            sections,
        });
    }
    Ok(out)
}

/// Two kinds sound alike when both are noise or share a pitch class root.
fn same_color(a: &SectionKind, b: &SectionKind) -> bool {
    let pc = |f: f64| ((12.0 * (f / 440.0).log2()).round() as i64).rem_euclid(12);
    match (a, b) {
        (SectionKind::Noise { .. }, SectionKind::Noise { .. }) => true,
        (SectionKind::Tone { freq: x } | SectionKind::Chord { root: x }, SectionKind::Tone { freq: y } | SectionKind::Chord { root: y }) => {
            pc(*x) == pc(*y)
        }
        _ => false,
    }
}

/// `count` short musical clips of `len` samples for overfitting tests.
pub fn toy_clips(count: usize, len: usize, sample_rate: u32, seed: u64) -> Vec<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let kind = loop {
                let k = SectionKind::random(&mut rng);
                if !matches!(k, SectionKind::Noise { .. }) {
                    break k;
                }
            };
            AudioClip::new(kind.render(len, sample_rate), sample_rate).expect("finite")
        })
        .collect()
}
