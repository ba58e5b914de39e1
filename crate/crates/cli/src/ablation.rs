//! Paired runs along one ablation axis, plus run-directory naming.

use std::path::{Path, PathBuf};

use accomp::metrics::EvalReport;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::config::{Granularity, RunConfig};
use crate::error::{CliError, CliResult};
use crate::stages;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Axis {
    /// Semantic weight 0 against the configured weight.
    VaeSemantics,
    /// One caption per track against one per segment.
    CaptionGranularity,
    /// No fine-tuning against a number of fine-tuning epochs.
    SftEpochs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub axis: Axis,
    pub arm: String,
    /// Config keys this arm sets, as `key=value`.
    pub overrides: Vec<String>,
    /// Run directory of every stage, in pipeline order.
    pub stages: Vec<(String, PathBuf)>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub arms: Vec<ArmReport>,
}

/// `<out_dir>/<stage>-<timestamp>-<hash12>`, or `paths.run_dir` verbatim.
pub fn prepare_run_dir(cfg: &RunConfig, stage: &str) -> CliResult<PathBuf> {
    let dir = match &cfg.paths.run_dir {
        Some(d) => d.clone(),
        None => {
            let parent = cfg.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
            let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f").to_string().replace('.', "");
            let base = format!("{stage}-{stamp}-{}", cfg.hash12()?);
            let mut dir = parent.join(&base);
            let mut n = 1;
            while dir.exists() {
                dir = parent.join(format!("{base}-{n}"));
                n += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    Ok(dir)
}

type StageFn = fn(&RunConfig, &Path) -> CliResult<()>;

/// Runs one stage into `root/<name>` with `input` as its input.
struct Runner<'a> {
    root: &'a Path,
    stages: Vec<(String, PathBuf)>,
}

impl Runner<'_> {
    fn stage(&mut self, name: &str, cfg: &RunConfig, f: StageFn) -> CliResult<PathBuf> {
        let dir = self.root.join(name);
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let mut cfg = cfg.clone();
        cfg.paths.run_dir = Some(dir.clone());
        cfg.write_effective(&dir)?;
        log::info!("ablation stage `{name}`");
        f(&cfg, &dir)?;
        self.stages.push((name.to_string(), dir.clone()));
        Ok(dir)
    }
}

fn with_input(cfg: &RunConfig, input: &Path) -> RunConfig {
    let mut c = cfg.clone();
    c.paths.input = Some(input.to_path_buf());
    c
}

/// Shared data stages; returns the slice run directory.
fn prepare_data(cfg: &RunConfig, r: &mut Runner) -> CliResult<PathBuf> {
    let corpus = match &cfg.paths.input {
        Some(p) => p.clone(),
        None => r.stage("synth-corpus", cfg, stages::synth_corpus_stage)?,
    };
    let segments = r.stage("segment", &with_input(cfg, &corpus), stages::segment_stage)?;
    r.stage("slice", &with_input(cfg, &segments), stages::slice_stage)
}

fn caption_to_filter(cfg: &RunConfig, r: &mut Runner, slices: &Path, prefix: &str) -> CliResult<PathBuf> {
    let captions = r.stage(&format!("{prefix}caption"), &with_input(cfg, slices), stages::caption_stage)?;
    let graded = r.stage(&format!("{prefix}grade"), &with_input(cfg, &captions), stages::grade_stage)?;
    r.stage(&format!("{prefix}filter"), &with_input(cfg, &graded), stages::filter_stage)
}

/// train-dit → generate → eval for one arm.
fn dit_to_eval(cfg: &RunConfig, r: &mut Runner, manifest: &Path, vae: &Path, prefix: &str) -> CliResult<EvalReport> {
    let mut c = with_input(cfg, manifest);
    c.paths.vae = Some(vae.to_path_buf());
    let dit = r.stage(&format!("{prefix}train-dit"), &c, stages::train_dit_stage)?;
    c.paths.dit = Some(dit);
    c.generate.text = None;
    let generated = r.stage(&format!("{prefix}generate"), &c, stages::generate_stage)?;
    let mut e = with_input(cfg, &generated);
    e.paths.reference = Some(manifest.to_path_buf());
    let dir = r.root.join(format!("{prefix}eval"));
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    e.paths.run_dir = Some(dir.clone());
    e.write_effective(&dir)?;
    let report = stages::eval_stage(&e, &dir)?;
    r.stages.push((format!("{prefix}eval"), dir));
    Ok(report)
}

pub fn run_ablation(cfg: &RunConfig, axis: Axis, dir: &Path) -> CliResult<AblationReport> {
    let mut shared = Runner { root: dir, stages: Vec::new() };
    let slices = prepare_data(cfg, &mut shared)?;
    let mut arms = Vec::new();
    let arm = |name: &str, overrides: Vec<String>, runner: Runner, report: EvalReport, shared: &Runner| ArmReport {
        axis,
        arm: name.to_string(),
        overrides,
        stages: shared.stages.iter().cloned().chain(runner.stages).collect(),
        report,
    };
    match axis {
        Axis::VaeSemantics => {
            let manifest = caption_to_filter(cfg, &mut shared, &slices, "")?;
            for (name, w) in [("w_sem_0", 0.0), ("w_sem_on", cfg.ablation.w_sem)] {
                let mut c = with_input(cfg, &manifest);
                c.vae.weights.sem = w;
                let mut r = Runner { root: dir, stages: Vec::new() };
                let prefix = format!("{name}/");
                let vae = r.stage(&format!("{prefix}train-vae"), &c, stages::train_vae_stage)?;
                let report = dit_to_eval(&c, &mut r, &manifest, &vae, &prefix)?;
                arms.push(arm(name, vec![format!("vae.weights.sem={w}")], r, report, &shared));
            }
        }
        Axis::CaptionGranularity => {
            let vae = shared.stage("train-vae", &with_input(cfg, &slices), stages::train_vae_stage)?;
            for (name, g) in [("segment", Granularity::Segment), ("track", Granularity::Track)] {
                let mut c = cfg.clone();
                c.caption.granularity = g;
                let mut r = Runner { root: dir, stages: Vec::new() };
                let prefix = format!("{name}/");
                let manifest = caption_to_filter(&c, &mut r, &slices, &prefix)?;
                let report = dit_to_eval(&c, &mut r, &manifest, &vae, &prefix)?;
                arms.push(arm(name, vec![format!("caption.granularity=\"{name}\"")], r, report, &shared));
            }
        }
        Axis::SftEpochs => {
            let manifest = caption_to_filter(cfg, &mut shared, &slices, "")?;
            let vae = shared.stage("train-vae", &with_input(cfg, &manifest), stages::train_vae_stage)?;
            for epochs in [0, cfg.ablation.sft_epochs] {
                let name = format!("sft_{epochs}");
                let mut c = cfg.clone();
                c.dit_train.sft_epochs = epochs;
                let mut r = Runner { root: dir, stages: Vec::new() };
                let report = dit_to_eval(&c, &mut r, &manifest, &vae, &format!("{name}/"))?;
                arms.push(arm(&name, vec![format!("dit_train.sft_epochs={epochs}")], r, report, &shared));
            }
        }
    }
    let report = AblationReport { axis, arms };
    let path = dir.join("ablation_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).map_err(accomp::Error::from)?).map_err(CliError::io(path))?;
    Ok(report)
}
