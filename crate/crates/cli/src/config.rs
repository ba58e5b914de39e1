//! Run configuration: one TOML tree covering every tunable, merged from a
//! preset, an optional file, `S2A_` environment variables and flags.

use std::path::{Path, PathBuf};

use accomp::dit::{DitConfig, DitTrainConfig};
use accomp::structure::{SegmenterConfig, Stratification};
use accomp::synth::SynthCorpusConfig;
use accomp::vae::{VaeConfig, VaeTrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "S2A_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One caption per segment.
    #[default]
    Segment,
    /// One caption per track, reused for all of its segments.
    Track,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Previous stage's run directory or output file.
    pub input: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub dit: Option<PathBuf>,
    /// Reference clips for `eval`.
    pub reference: Option<PathBuf>,
    /// Training checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Parent of the generated run directories.
    pub out_dir: Option<PathBuf>,
    /// Exact output directory, overriding the generated name.
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub min_s: f64,
    pub max_s: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self { min_s: 10.0, max_s: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionConfig {
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { dim: accomp::embed::DEFAULT_EMBED_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradeConfig {
    pub quality_frame: usize,
    pub stratification: Stratification,
}

impl Default for GradeConfig {
    fn default() -> Self {
        Self { quality_frame: 1024, stratification: Stratification::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Prompt; when absent, prompts come from the retained rows of the
    /// input manifest.
    pub text: Option<String>,
    pub duration_s: f64,
    /// Manifest prompts used at most.
    pub limit: usize,
    /// Sampler steps; `dit.sampler_steps` when absent.
    pub steps: Option<usize>,
    /// Guidance scale; `dit.cfg_scale` when absent.
    pub cfg_scale: Option<f64>,
    pub seed: u64,
    pub allow_vae_mismatch: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { text: None, duration_s: 10.0, limit: 4, steps: None, cfg_scale: None, seed: 0, allow_vae_mismatch: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Sharpness of the embedding judge's sigmoid.
    pub judge_scale: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { judge_scale: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Semantic weight of the `vae_semantics` treatment arm.
    pub w_sem: f64,
    /// Fine-tuning epochs of the `sft_epochs` treatment arm.
    pub sft_epochs: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { w_sem: 0.25, sft_epochs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Copied into every section seed that is not set explicitly.
    pub seed: u64,
    pub workers: usize,
    /// Save a training checkpoint every this many steps; 0 saves only at
    /// the end.
    pub checkpoint_every: u64,
    pub paths: Paths,
    pub corpus: SynthCorpusConfig,
    pub segmenter: SegmenterConfig,
    pub slice: SliceConfig,
    pub caption: CaptionConfig,
    pub embed: EmbedConfig,
    pub grade: GradeConfig,
    pub vae: VaeConfig,
    pub vae_train: VaeTrainConfig,
    pub dit: DitConfig,
    pub dit_train: DitTrainConfig,
    pub generate: GenerateConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

/// Sections whose `seed` follows the global one unless set.
const SEEDED_SECTIONS: [&str; 4] = ["corpus", "vae_train", "dit_train", "generate"];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut c = Self {
            preset,
            seed: 0,
            workers: 1,
            checkpoint_every: 0,
            paths: Paths::default(),
            corpus: SynthCorpusConfig::default(),
            segmenter: SegmenterConfig::default(),
            slice: SliceConfig::default(),
            caption: CaptionConfig::default(),
            embed: EmbedConfig::default(),
            grade: GradeConfig::default(),
            vae: VaeConfig::desk(),
            vae_train: VaeTrainConfig::default(),
            dit: DitConfig::desk(),
            dit_train: DitTrainConfig::default(),
            generate: GenerateConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        };
        if preset == Preset::Paper {
            c.vae = VaeConfig::paper();
            c.dit = DitConfig::paper();
            c.dit_train.pretrain_steps = 400_000;
            c.dit_train.sft_epochs = 10;
        }
        c
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("config does not serialize: {e}")))
    }

    /// First 12 hex digits of the SHA-256 of the effective TOML, with the
    /// output location left out so the hash names the content.
    pub fn hash12(&self) -> CliResult<String> {
        let mut c = self.clone();
        c.paths.run_dir = None;
        c.paths.out_dir = None;
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes()))[..12].to_string())
    }

    pub fn write_effective(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("effective_config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(CliError::io(path))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |e: accomp::Error| CliError::Usage(e.to_string());
        self.vae.validate().map_err(bad)?;
        self.dit.validate().map_err(bad)?;
        if self.dit.latent_channels != self.vae.latent_channels {
            return Err(CliError::Usage(format!(
                "dit.latent_channels {} differs from vae.latent_channels {}",
                self.dit.latent_channels, self.vae.latent_channels
            )));
        }
        if self.dit.style_dim != self.embed.dim {
            return Err(CliError::Usage(format!("dit.style_dim {} differs from embed.dim {}", self.dit.style_dim, self.embed.dim)));
        }
        if self.workers == 0 {
            return Err(CliError::Usage("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ordered configuration layers; later layers win.
#[derive(Debug, Default, Clone)]
pub struct Layers {
    pub file: Option<PathBuf>,
    pub env: Vec<(String, String)>,
    /// `key.path=value` overrides from `--set`.
    pub sets: Vec<String>,
    /// Overrides from dedicated flags.
    pub flags: Vec<(String, Value)>,
}

impl Layers {
    /// `S2A_` variables from the process environment.
    pub fn with_process_env(mut self) -> Self {
        self.env = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        self.env.sort();
        self
    }

    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut overlay = Table::new();
        if let Some(path) = &self.file {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            let table: Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            merge(&mut overlay, table);
        }
        for (name, raw) in &self.env {
            let key = name[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
            set_path(&mut overlay, &key, parse_value(raw))?;
        }
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
            set_path(&mut overlay, k.trim(), parse_value(v.trim()))?;
        }
        for (k, v) in &self.flags {
            set_path(&mut overlay, k, v.clone())?;
        }
        let preset: Preset = match overlay.get("preset") {
            Some(v) => v.clone().try_into().map_err(|e| CliError::Usage(format!("preset: {e}")))?,
            None => Preset::Desk,
        };
        if let Some(seed) = overlay.get("seed").cloned() {
            for section in SEEDED_SECTIONS {
                let entry = overlay.entry(section).or_insert_with(|| Value::Table(Table::new()));
                if let Value::Table(t) = entry {
                    t.entry("seed").or_insert(seed.clone());
                }
            }
        }
        let base = Value::try_from(RunConfig::preset(preset)).map_err(|e| CliError::Usage(e.to_string()))?;
        let Value::Table(mut tree) = base else { unreachable!("config serializes to a table") };
        merge(&mut tree, overlay);
        let cfg: RunConfig = Value::Table(tree).try_into().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Deep merge; tables merge key by key, anything else is replaced.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(root: &mut Table, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed config key `{key}`")));
    }
    let mut t = root;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = match entry {
            Value::Table(inner) => inner,
            _ => return Err(CliError::Usage(format!("config key `{key}` descends into a non-table"))),
        };
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A TOML literal when it parses as one, otherwise a bare string.
pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}")).ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| Value::String(raw.to_string()))
}
