//! One function per subcommand. Each reads its inputs from `cfg.paths` and
//! writes into an existing run directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use accomp::audio::AudioClip;
use accomp::checkpoint;
use accomp::dit::{phase_rows, AccompDit, DitExample, DitTrainer, Generator, Phase, StepLog};
use accomp::embed::{HashProjectionEmbedder, StyleEmbedder};
use accomp::metrics::{clap_score, concept_coverage, fad, EmbeddingJudge, EvalReport};
use accomp::structure::{
    apply_duration_policy, caption_segment, grade_segments, read_manifest, slice_by_boundaries, stratify, synthesize_caption,
    write_manifest, CaptionRecord, EmbedderSimilarity, FlatnessQuality, GradedSegment, ManifestRecord, NoveltySegmenter,
    RuleTagger, Segmenter, StructuredSegment, TagDimension, TagSet, Tagger, GENRE_VOCAB, INSTRUMENT_VOCAB, MOOD_VOCAB,
};
use accomp::synth::{synth_corpus, SectionSpan};
use accomp::vae::{LossBreakdown, SemanticVae, VaeTrainer};
use candle_core::DType;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Granularity, RunConfig};
use crate::error::{CliError, CliResult};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const SLICES_FILE: &str = "slices.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VAE_FILE: &str = "vae.safetensors";
pub const VAE_LOG: &str = "losses.jsonl";
pub const DIT_FILE: &str = "dit.safetensors";
pub const DIT_LOG: &str = "train_log.jsonl";
pub const GENERATED_FILE: &str = "generated.jsonl";
pub const REPORT_FILE: &str = "report.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackEntry {
    pub track_id: String,
    #[serde(default)]
    pub mixed: Option<PathBuf>,
    pub instrumental: PathBuf,
    #[serde(default)]
    pub sections: Vec<SectionSpan>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentEntry {
    #[serde(flatten)]
    pub segment: StructuredSegment,
    pub instrumental: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceEntry {
    #[serde(flatten)]
    pub segment: StructuredSegment,
    pub audio_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedEntry {
    pub id: String,
    pub text: String,
    pub duration_s: f64,
    pub seed: u64,
    pub audio_path: PathBuf,
    pub sha256: String,
    /// Concepts the prompt asks for, used by concept coverage.
    pub concepts: Vec<(TagDimension, String)>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::Input { path: path.into(), detail: format!("line {}: {e}", i + 1) })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(accomp::Error::from)?;
        writeln!(w, "{line}").map_err(CliError::io(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

/// `path` itself when it is a file, else `path/name`.
pub fn resolve(path: &Path, name: &str) -> CliResult<PathBuf> {
    let p = if path.is_dir() { path.join(name) } else { path.to_path_buf() };
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::Input { path: p, detail: format!("expected `{name}` or a directory containing it") })
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(CliError::io(p))
}

fn create_dir(p: &Path) -> CliResult<()> {
    std::fs::create_dir_all(p).map_err(CliError::io(p))
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn synth_corpus_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let tracks = synth_corpus(&cfg.corpus)?;
    let audio = dir.join("tracks");
    create_dir(&audio)?;
    let mut entries = Vec::with_capacity(tracks.len());
    for t in tracks {
        let mixed = absolute(&audio.join(format!("{}.mix.wav", t.track_id)))?;
        let instrumental = absolute(&audio.join(format!("{}.inst.wav", t.track_id)))?;
        t.mixed.write_wav(&mixed)?;
        t.instrumental.write_wav(&instrumental)?;
        entries.push(TrackEntry { track_id: t.track_id, mixed: Some(mixed), instrumental, sections: t.sections });
    }
    log::info!("wrote {} synthetic tracks", entries.len());
    write_jsonl(&dir.join(CORPUS_FILE), &entries)
}

/// Tracks from a corpus file, or from a directory of `<id>.mix.wav` /
/// `<id>.inst.wav` pairs and lone `<id>.wav` instrumentals.
pub fn load_tracks(input: &Path) -> CliResult<Vec<TrackEntry>> {
    if input.is_file() || input.join(CORPUS_FILE).is_file() {
        return read_jsonl(&resolve(input, CORPUS_FILE)?);
    }
    let mut found: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for entry in std::fs::read_dir(input).map_err(CliError::io(input))? {
        let path = entry.map_err(CliError::io(input))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
        let path = absolute(&path)?;
        if let Some(id) = name.strip_suffix(".mix.wav") {
            found.entry(id.into()).or_default().0 = Some(path);
        } else if let Some(id) = name.strip_suffix(".inst.wav").or_else(|| name.strip_suffix(".wav")) {
            found.entry(id.into()).or_default().1 = Some(path);
        }
    }
    let mut tracks = Vec::new();
    for (track_id, (mixed, inst)) in found {
        let instrumental = inst.ok_or_else(|| CliError::Input { path: input.into(), detail: format!("track `{track_id}` has no instrumental") })?;
        tracks.push(TrackEntry { track_id, mixed, instrumental, sections: Vec::new() });
    }
    if tracks.is_empty() {
        return Err(CliError::Input { path: input.into(), detail: "no tracks found".into() });
    }
    Ok(tracks)
}

pub fn segment_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let tracks = load_tracks(required(&cfg.paths.input, "--input (corpus)")?)?;
    let segmenter = NoveltySegmenter::new(cfg.segmenter.clone());
    let per_track: Vec<CliResult<Vec<SegmentEntry>>> = with_pool(cfg.workers, || {
        tracks
            .par_iter()
            .map(|t| {
                let reference = match &t.mixed {
                    Some(p) => AudioClip::read_wav(p)?,
                    None => {
                        log::warn!("track `{}` has no mixed audio; segmenting the instrumental", t.track_id);
                        AudioClip::read_wav(&t.instrumental)?
                    }
                };
                let segs = segmenter.segment(&t.track_id, &reference)?;
                Ok(segs.into_iter().map(|segment| SegmentEntry { segment, instrumental: t.instrumental.clone() }).collect())
            })
            .collect()
    })?;
    let mut out = Vec::new();
    for r in per_track {
        out.extend(r?);
    }
    log::info!("{} segments from {} tracks", out.len(), tracks.len());
    write_jsonl(&dir.join(SEGMENTS_FILE), &out)
}

pub fn slice_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let entries: Vec<SegmentEntry> = read_jsonl(&resolve(required(&cfg.paths.input, "--input (segments)")?, SEGMENTS_FILE)?)?;
    let mut groups: Vec<(PathBuf, Vec<StructuredSegment>)> = Vec::new();
    for e in entries {
        match groups.last_mut() {
            Some((p, segs)) if *p == e.instrumental && segs[0].track_id == e.segment.track_id => segs.push(e.segment),
            _ => groups.push((e.instrumental, vec![e.segment])),
        }
    }
    let clips_dir = dir.join("clips");
    create_dir(&clips_dir)?;
    let (min_s, max_s) = (cfg.slice.min_s, cfg.slice.max_s);
    let per_track: Vec<CliResult<Vec<SliceEntry>>> = with_pool(cfg.workers, || {
        groups
            .par_iter()
            .map(|(path, segs)| {
                let inst = AudioClip::read_wav(path)?;
                let kept = apply_duration_policy(slice_by_boundaries(&inst, segs)?, min_s, max_s);
                let mut out = Vec::with_capacity(kept.len());
                for (segment, clip) in kept {
                    let name = format!("{}_{:07.2}.wav", segment.track_id, segment.start_s);
                    let audio_path = absolute(&clips_dir.join(name))?;
                    clip.write_wav(&audio_path)?;
                    out.push(SliceEntry { segment, audio_path });
                }
                Ok(out)
            })
            .collect()
    })?;
    let mut out = Vec::new();
    for r in per_track {
        out.extend(r?);
    }
    log::info!("{} clips kept by the [{min_s}, {max_s}] s duration policy", out.len());
    write_jsonl(&dir.join(SLICES_FILE), &out)
}

fn read_clips(paths: &[PathBuf], workers: usize, sample_rate: Option<u32>) -> CliResult<Vec<AudioClip>> {
    let clips: Vec<accomp::Result<AudioClip>> = with_pool(workers, || {
        paths
            .par_iter()
            .map(|p| match sample_rate {
                Some(sr) => AudioClip::read_wav_at(p, sr),
                None => AudioClip::read_wav(p),
            })
            .collect()
    })?;
    clips.into_iter().map(|c| c.map_err(CliError::from)).collect()
}

pub fn caption_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let slices: Vec<SliceEntry> = read_jsonl(&resolve(required(&cfg.paths.input, "--input (slices)")?, SLICES_FILE)?)?;
    let paths: Vec<PathBuf> = slices.iter().map(|s| s.audio_path.clone()).collect();
    let clips = read_clips(&paths, cfg.workers, None)?;
    let tagger = RuleTagger;
    let records: Vec<CaptionRecord> = match cfg.caption.granularity {
        Granularity::Segment => {
            let r: Vec<accomp::Result<CaptionRecord>> = with_pool(cfg.workers, || {
                slices.par_iter().zip(&clips).map(|(s, c)| caption_segment(c, &s.segment, &tagger)).collect()
            })?;
            r.into_iter().collect::<accomp::Result<_>>()?
        }
        Granularity::Track => {
            let mut by_track: BTreeMap<&str, Vec<&AudioClip>> = BTreeMap::new();
            for (s, c) in slices.iter().zip(&clips) {
                by_track.entry(&s.segment.track_id).or_default().push(c);
            }
            let mut per_track: BTreeMap<&str, (TagSet, String)> = BTreeMap::new();
            for (track, cs) in by_track {
                let whole = AudioClip::concat(&cs.into_iter().cloned().collect::<Vec<_>>())?;
                let tags = TagSet::from_raw(tagger.tag(&whole)?)?;
                let caption = synthesize_caption(&tags);
                per_track.insert(track, (tags, caption));
            }
            slices
                .iter()
                .map(|s| {
                    let (tags, caption) = per_track[s.segment.track_id.as_str()].clone();
                    CaptionRecord { segment: s.segment.clone(), tags, caption }
                })
                .collect()
        }
    };
    let rows: Vec<ManifestRecord> =
        records.into_iter().zip(&slices).map(|(r, s)| ManifestRecord::from_caption(r, s.audio_path.to_string_lossy())).collect();
    write_manifest_file(&dir.join(MANIFEST_FILE), &rows)
}

pub fn write_manifest_file(path: &Path, rows: &[ManifestRecord]) -> CliResult<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    write_manifest(&mut w, rows)?;
    w.flush().map_err(CliError::io(path))
}

pub fn read_manifest_file(path: &Path) -> CliResult<Vec<ManifestRecord>> {
    let path = resolve(path, MANIFEST_FILE)?;
    let file = File::open(&path).map_err(CliError::io(&path))?;
    Ok(read_manifest(BufReader::new(file))?.1)
}

fn manifest_clips(rows: &[ManifestRecord], workers: usize, sample_rate: Option<u32>) -> CliResult<Vec<AudioClip>> {
    let paths: Vec<PathBuf> = rows.iter().map(|r| PathBuf::from(&r.audio_path)).collect();
    read_clips(&paths, workers, sample_rate)
}

pub fn grade_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let rows = read_manifest_file(required(&cfg.paths.input, "--input (captioned manifest)")?)?;
    let clips = manifest_clips(&rows, cfg.workers, None)?;
    let embedder = HashProjectionEmbedder::new(cfg.embed.dim);
    let quality = FlatnessQuality { frame_size: cfg.grade.quality_frame };
    let similarity = EmbedderSimilarity { embedder: &embedder };
    let paths: Vec<String> = rows.iter().map(|r| r.audio_path.clone()).collect();
    let graded = grade_segments(rows.iter().map(ManifestRecord::caption_record).collect(), &clips, &quality, &similarity, cfg.grade.stratification)?;
    let out: Vec<ManifestRecord> = graded.into_iter().zip(paths).map(|(g, p)| ManifestRecord::from_graded(g, p)).collect();
    log::info!("graded {} rows, {} retained", out.len(), out.iter().filter(|r| r.retained).count());
    write_manifest_file(&dir.join(MANIFEST_FILE), &out)
}

pub fn filter_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let input = required(&cfg.paths.input, "--input (graded manifest)")?;
    let rows = read_manifest_file(input)?;
    let mut graded = Vec::with_capacity(rows.len());
    for r in &rows {
        let (Some(q), Some(s), Some(c)) = (r.quality_score, r.similarity_score, r.combined_rank_score) else {
            return Err(CliError::Input { path: input.into(), detail: format!("row `{}` @ {} s is ungraded; run `grade` first", r.track_id, r.start_s) });
        };
        graded.push(GradedSegment { record: r.caption_record(), quality_score: q, similarity_score: s, combined_rank_score: c, retained: false });
    }
    let kept = stratify(graded, cfg.grade.stratification)?;
    let out: Vec<ManifestRecord> = kept.into_iter().zip(&rows).map(|(g, r)| ManifestRecord::from_graded(g, r.audio_path.clone())).collect();
    log::info!("{} of {} rows retained", out.iter().filter(|r| r.retained).count(), out.len());
    write_manifest_file(&dir.join(MANIFEST_FILE), &out)
}

/// Clip paths from a manifest or a slice list.
fn training_audio(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.join(MANIFEST_FILE).is_file() || (input.is_file() && !input.ends_with(SLICES_FILE)) {
        return Ok(read_manifest_file(input)?.into_iter().map(|r| PathBuf::from(r.audio_path)).collect());
    }
    Ok(read_jsonl::<SliceEntry>(&resolve(input, SLICES_FILE)?)?.into_iter().map(|s| s.audio_path).collect())
}

/// Runs `total` steps overall in chunks, saving after each chunk.
fn chunks(done: u64, total: u64, every: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut at = done;
    while at < total {
        let n = if every > 0 { every.min(total - at) } else { total - at };
        out.push(n);
        at += n;
    }
    out
}

pub fn train_vae_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let paths = training_audio(required(&cfg.paths.input, "--input (manifest or slices)")?)?;
    let mut trainer = match &cfg.paths.resume {
        Some(ckpt) => VaeTrainer::resume(resolve(ckpt, VAE_FILE)?)?,
        None => VaeTrainer::new(SemanticVae::new(cfg.vae.clone(), DType::F32, cfg.vae_train.seed)?, cfg.vae_train.clone())?,
    };
    let clips = read_clips(&paths, cfg.workers, Some(trainer.vae.config.sample_rate))?;
    let ckpt = dir.join(VAE_FILE);
    let mut log: Vec<LossBreakdown> = Vec::new();
    for n in chunks(trainer.step, cfg.vae_train.steps, cfg.checkpoint_every) {
        log.extend(trainer.run(&clips, n, |b| {
            if b.step % 50 == 0 {
                log::info!("vae step {}: total {:.4} recon {:.4} sem {:.4}", b.step, b.total, b.recon, b.sem);
            }
        })?);
        trainer.save(&ckpt)?;
    }
    if !ckpt.exists() {
        trainer.save(&ckpt)?;
    }
    write_jsonl(&dir.join(VAE_LOG), &log)
}

fn example_id(r: &ManifestRecord) -> String {
    format!("{}@{:.3}", r.track_id, r.start_s)
}

pub fn train_dit_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let rows = read_manifest_file(required(&cfg.paths.input, "--input (manifest)")?)?;
    let vae_path = resolve(required(&cfg.paths.vae, "--vae")?, VAE_FILE)?;
    let vae = SemanticVae::load(&vae_path)?;
    let vae_hash = checkpoint::file_hash(&vae_path)?;
    let embedder = HashProjectionEmbedder::new(cfg.embed.dim);
    let clips = manifest_clips(&rows, cfg.workers, Some(vae.config.sample_rate))?;
    let mut examples = Vec::with_capacity(rows.len());
    for (r, clip) in rows.iter().zip(&clips) {
        let latent = vae.encode(clip)?.mu;
        examples.push(DitExample { id: example_id(r), latent, text: embedder.embed_text(&r.caption), audio: Some(embedder.embed_audio(clip)) });
    }
    let mut trainer = match &cfg.paths.resume {
        Some(ckpt) => DitTrainer::resume(resolve(ckpt, DIT_FILE)?)?,
        None => {
            let scale = accomp::dit::latent_scale(&examples.iter().map(|e| &e.latent).collect::<Vec<_>>());
            DitTrainer::new(AccompDit::new(cfg.dit.clone(), DType::F32, cfg.dit_train.seed)?, cfg.dit_train.clone(), scale)?
        }
    };
    if trainer.model.config.latent_channels != vae.config.latent_channels {
        return Err(CliError::Usage("DiT and VAE latent channels differ".into()));
    }
    if let Some(h) = &trainer.vae_hash {
        if *h != vae_hash {
            return Err(CliError::Input { path: vae_path, detail: "resumed DiT was trained against a different VAE".into() });
        }
    }
    trainer.vae_hash = Some(vae_hash);
    for e in &mut examples {
        e.latent = e.latent.scaled(trainer.latent_scale);
    }
    let by_id: BTreeMap<String, &DitExample> = examples.iter().map(|e| (e.id.clone(), e)).collect();
    let pick = |phase| -> CliResult<Vec<DitExample>> {
        Ok(phase_rows(&rows, phase)?.into_iter().map(|r| by_id[&example_id(r)].clone()).collect())
    };
    let ckpt = dir.join(DIT_FILE);
    let mut log: Vec<StepLog> = Vec::new();
    let mut plan = vec![(Phase::Pretrain, examples.clone(), trainer.train.pretrain_steps)];
    if trainer.train.sft_epochs > 0 {
        let sft = pick(Phase::Sft)?;
        let steps = trainer.train.sft_epochs * trainer.steps_per_epoch(sft.len());
        plan.push((Phase::Sft, sft, steps));
    }
    for (phase, data, total) in plan {
        if trainer.phase == Phase::Sft && phase == Phase::Pretrain {
            continue;
        }
        trainer.enter_phase(phase);
        for n in chunks(trainer.phase_step, total, cfg.checkpoint_every) {
            log.extend(trainer.run(&data, n, |l| {
                if l.step % 50 == 0 {
                    log::info!("dit step {} ({:?}): loss {:.4}", l.step, l.phase, l.loss);
                }
            })?);
            trainer.save(&ckpt)?;
        }
    }
    if !ckpt.exists() {
        trainer.save(&ckpt)?;
    }
    write_jsonl(&dir.join(DIT_LOG), &log)
}

fn tag_concepts(tags: &TagSet) -> Vec<(TagDimension, String)> {
    TagDimension::ALL.iter().flat_map(|&d| tags.get(d).iter().map(move |t| (d, t.clone()))).collect()
}

/// Vocabulary words named in a free-text prompt.
pub fn text_concepts(text: &str) -> Vec<(TagDimension, String)> {
    let words: Vec<String> = accomp::embed::tokenize(text).collect();
    let mut out = Vec::new();
    for (dim, vocab) in [(TagDimension::Genre, &GENRE_VOCAB[..]), (TagDimension::Mood, &MOOD_VOCAB[..]), (TagDimension::Instrument, &INSTRUMENT_VOCAB[..])] {
        for v in vocab {
            if words.iter().any(|w| w == v) {
                out.push((dim, v.to_string()));
            }
        }
    }
    out
}

pub fn generate_stage(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let vae_path = resolve(required(&cfg.paths.vae, "--vae")?, VAE_FILE)?;
    let dit_path = resolve(required(&cfg.paths.dit, "--dit")?, DIT_FILE)?;
    let vae = SemanticVae::load(&vae_path)?;
    let g = &cfg.generate;
    let generator = Generator::load(&dit_path, Some(&checkpoint::file_hash(&vae_path)?), g.allow_vae_mismatch)?;
    let prompts: Vec<(String, Vec<(TagDimension, String)>)> = match &g.text {
        Some(t) => vec![(t.clone(), text_concepts(t))],
        None => {
            let rows = read_manifest_file(required(&cfg.paths.input, "--text or --input (manifest)")?)?;
            // Retained rows first, then the best-ranked of the rest.
            let mut pool: Vec<&ManifestRecord> = rows.iter().collect();
            pool.sort_by(|a, b| {
                b.retained.cmp(&a.retained).then(b.combined_rank_score.unwrap_or(f64::NEG_INFINITY).total_cmp(&a.combined_rank_score.unwrap_or(f64::NEG_INFINITY)))
            });
            pool.into_iter().take(g.limit.max(1)).map(|r| (r.caption.clone(), tag_concepts(&r.tags))).collect()
        }
    };
    let embedder = HashProjectionEmbedder::new(cfg.embed.dim);
    let steps = g.steps.unwrap_or(generator.model.config.sampler_steps);
    let scale = g.cfg_scale.unwrap_or(generator.model.config.cfg_scale);
    let mut out = Vec::with_capacity(prompts.len());
    for (i, (text, concepts)) in prompts.into_iter().enumerate() {
        let seed = g.seed + i as u64;
        let clip = generator.generate(&text, g.duration_s, &vae, &embedder, steps, scale, seed)?;
        let audio_path = absolute(&dir.join(format!("gen_{i:03}.wav")))?;
        clip.write_wav(&audio_path)?;
        let sha256 = sha256_file(&audio_path)?;
        log::info!("generated {} ({:.1} s, peak {:.3}) for `{text}`", audio_path.display(), clip.duration_seconds(), clip.peak());
        out.push(GeneratedEntry { id: format!("gen_{i:03}"), text, duration_s: g.duration_s, seed, audio_path, sha256, concepts });
    }
    write_jsonl(&dir.join(GENERATED_FILE), &out)
}

/// Clip paths from a manifest, a slice list or a generate run.
fn reference_audio(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.join(GENERATED_FILE).is_file() {
        return Ok(read_jsonl::<GeneratedEntry>(&input.join(GENERATED_FILE))?.into_iter().map(|g| g.audio_path).collect());
    }
    training_audio(input)
}

pub fn eval_stage(cfg: &RunConfig, dir: &Path) -> CliResult<EvalReport> {
    let generated: Vec<GeneratedEntry> = read_jsonl(&resolve(required(&cfg.paths.input, "--input (generate run)")?, GENERATED_FILE)?)?;
    let gen_clips = read_clips(&generated.iter().map(|g| g.audio_path.clone()).collect::<Vec<_>>(), cfg.workers, None)?;
    let sr = gen_clips.first().map(AudioClip::sample_rate);
    let ref_paths = reference_audio(required(&cfg.paths.reference, "--reference")?)?;
    let ref_clips = read_clips(&ref_paths, cfg.workers, sr)?;
    let embedder = HashProjectionEmbedder::new(cfg.embed.dim);
    let judge = EmbeddingJudge { embedder: &embedder, scale: cfg.eval.judge_scale };
    let pairs: Vec<(String, AudioClip)> = generated.iter().zip(&gen_clips).map(|(g, c)| (g.text.clone(), c.clone())).collect();
    let items: Vec<(&AudioClip, &[(TagDimension, String)])> = gen_clips.iter().zip(&generated).map(|(c, g)| (c, g.concepts.as_slice())).collect();
    let report = EvalReport {
        fad: fad(&gen_clips, &ref_clips, &embedder)?,
        clap: clap_score(&pairs, &embedder)?,
        ccs: concept_coverage(&items, &judge)?,
        n_generated: gen_clips.len(),
        n_reference: ref_clips.len(),
        embedder_id: embedder.id(),
        judge_id: accomp::metrics::ConceptJudge::id(&judge),
        config_hash: cfg.hash12()?,
    };
    write_jsonl(&dir.join(REPORT_FILE), std::slice::from_ref(&report))?;
    Ok(report)
}
