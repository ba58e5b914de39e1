use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use toml::Value;

mod ablation;
mod config;
mod error;
mod stages;

use ablation::Axis;
use config::{Layers, RunConfig};
use error::CliResult;

#[derive(Debug, Args, Clone)]
struct Common {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, e.g. `--set vae_train.steps=200`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, value_parser = ["desk", "paper"], global = true)]
    preset: Option<String>,
    /// Global seed, copied into every section seed not set explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads for per-track stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Previous stage's run directory or output file.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Parent directory for run directories (default `runs`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Exact output directory.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GranularityArg {
    Segment,
    Track,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus of paired mixed/instrumental tracks.
    SynthCorpus {
        #[arg(long)]
        tracks: Option<usize>,
    },
    /// Detect structural segments on the mixed tracks.
    Segment,
    /// Cut instrumentals at segment boundaries and apply the duration policy.
    Slice,
    /// Tag and caption each clip.
    Caption {
        #[arg(long, value_enum)]
        granularity: Option<GranularityArg>,
    },
    /// Score quality and text-audio similarity.
    Grade,
    /// Mark the top fraction of graded rows as retained.
    Filter {
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train the semantic VAE.
    TrainVae {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Pretrain the DiT on all rows, then fine-tune on retained rows.
    TrainDit {
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        pretrain_steps: Option<u64>,
        #[arg(long)]
        sft_epochs: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate accompaniment from a prompt, or from manifest captions.
    Generate {
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        dit: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
        /// Seconds, in [1, 30].
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cfg_scale: Option<f64>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        allow_vae_mismatch: bool,
    },
    /// FAD, text-audio alignment and concept coverage of generated audio.
    Eval {
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Paired desk-scale runs along one ablation axis.
    Ablation {
        #[arg(long, value_enum)]
        axis: Axis,
    },
}

#[derive(Debug, Parser)]
#[command(name = "accomp", version, about = "Accompaniment pipeline: data preparation, training, generation and evaluation")]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn push<T: Into<Value>>(flags: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        flags.push((key.to_string(), v.into()));
    }
}

fn path_value(p: PathBuf) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

fn layers(common: &Common, command: &Command) -> CliResult<Layers> {
    let mut f = Vec::new();
    push(&mut f, "preset", common.preset.clone());
    push(&mut f, "seed", common.seed.map(|s| s as i64));
    push(&mut f, "workers", common.workers.map(|w| w as i64));
    push(&mut f, "paths.input", common.input.clone().map(path_value));
    push(&mut f, "paths.out_dir", common.out_dir.clone().map(path_value));
    push(&mut f, "paths.run_dir", common.run_dir.clone().map(path_value));
    let int = |v: Option<u64>| v.map(|v| v as i64);
    match command {
        Command::SynthCorpus { tracks } => push(&mut f, "corpus.tracks", tracks.map(|t| t as i64)),
        Command::Caption { granularity } => push(
            &mut f,
            "caption.granularity",
            granularity.map(|g| match g {
                GranularityArg::Segment => "segment",
                GranularityArg::Track => "track",
            }),
        ),
        Command::Filter { fraction } => {
            if let Some(fr) = fraction {
                let mut t = toml::Table::new();
                t.insert("mode".into(), "top_fraction".into());
                t.insert("fraction".into(), (*fr).into());
                f.push(("grade.stratification".into(), Value::Table(t)));
            }
        }
        Command::TrainVae { steps, resume } => {
            push(&mut f, "vae_train.steps", int(*steps));
            push(&mut f, "paths.resume", resume.clone().map(path_value));
        }
        Command::TrainDit { vae, pretrain_steps, sft_epochs, resume } => {
            push(&mut f, "paths.vae", vae.clone().map(path_value));
            push(&mut f, "dit_train.pretrain_steps", int(*pretrain_steps));
            push(&mut f, "dit_train.sft_epochs", int(*sft_epochs));
            push(&mut f, "paths.resume", resume.clone().map(path_value));
        }
        Command::Generate { vae, dit, text, duration, steps, cfg_scale, limit, allow_vae_mismatch } => {
            push(&mut f, "paths.vae", vae.clone().map(path_value));
            push(&mut f, "paths.dit", dit.clone().map(path_value));
            push(&mut f, "generate.text", text.clone());
            push(&mut f, "generate.duration_s", *duration);
            push(&mut f, "generate.steps", steps.map(|s| s as i64));
            push(&mut f, "generate.cfg_scale", *cfg_scale);
            push(&mut f, "generate.limit", limit.map(|s| s as i64));
            if *allow_vae_mismatch {
                f.push(("generate.allow_vae_mismatch".into(), Value::Boolean(true)));
            }
        }
        Command::Eval { reference } => push(&mut f, "paths.reference", reference.clone().map(path_value)),
        Command::Segment | Command::Slice | Command::Grade | Command::Ablation { .. } => {}
    }
    Ok(Layers { file: common.config.clone(), env: Vec::new(), sets: common.sets.clone(), flags: f }.with_process_env())
}

fn stage_name(command: &Command) -> &'static str {
    match command {
        Command::SynthCorpus { .. } => "synth-corpus",
        Command::Segment => "segment",
        Command::Slice => "slice",
        Command::Caption { .. } => "caption",
        Command::Grade => "grade",
        Command::Filter { .. } => "filter",
        Command::TrainVae { .. } => "train-vae",
        Command::TrainDit { .. } => "train-dit",
        Command::Generate { .. } => "generate",
        Command::Eval { .. } => "eval",
        Command::Ablation { .. } => "ablation",
    }
}

fn run(root: Root) -> CliResult<PathBuf> {
    let cfg: RunConfig = layers(&root.common, &root.command)?.resolve()?;
    let name = stage_name(&root.command);
    let dir = ablation::prepare_run_dir(&cfg, name)?;
    cfg.write_effective(&dir)?;
    match root.command {
        Command::SynthCorpus { .. } => stages::synth_corpus_stage(&cfg, &dir)?,
        Command::Segment => stages::segment_stage(&cfg, &dir)?,
        Command::Slice => stages::slice_stage(&cfg, &dir)?,
        Command::Caption { .. } => stages::caption_stage(&cfg, &dir)?,
        Command::Grade => stages::grade_stage(&cfg, &dir)?,
        Command::Filter { .. } => stages::filter_stage(&cfg, &dir)?,
        Command::TrainVae { .. } => stages::train_vae_stage(&cfg, &dir)?,
        Command::TrainDit { .. } => stages::train_dit_stage(&cfg, &dir)?,
        Command::Generate { .. } => stages::generate_stage(&cfg, &dir)?,
        Command::Eval { .. } => {
            let report = stages::eval_stage(&cfg, &dir)?;
            println!("{}", serde_json::to_string(&report).map_err(accomp::Error::from)?);
        }
        Command::Ablation { axis } => {
            let report = ablation::run_ablation(&cfg, axis, &dir)?;
            for arm in &report.arms {
                println!("{}", serde_json::to_string(arm).map_err(accomp::Error::from)?);
            }
        }
    }
    Ok(dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = match Root::try_parse() {
        Ok(r) => r,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(root) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
