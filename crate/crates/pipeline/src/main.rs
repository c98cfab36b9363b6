use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use coevo::config::{PipelineConfig, Preset};
use coevo::eval::{evaluate, EvalOptions, JudgeMode};
use coevo::manifest::{RunManifest, Stage};
use coevo::run::{resume, run_pipeline, RunOptions};
use coevo_core::camera::Lighting;
use coevo_core::corpus::standard_corpus;
use coevo_eval::Layout;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "coevo", version, about = "Subject-driven multi-view generation and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage (or up to --stage-until) in a fresh workspace.
    Run(RunArgs),
    /// Continue a run after its last completed stage.
    Resume(ResumeArgs),
    /// Score a finished run.
    Eval(EvalArgs),
    /// Write the synthetic subject corpus as PNG views plus a JSON index.
    MakeCorpus(CorpusArgs),
}

#[derive(Args)]
struct PresetFlags {
    /// 32×32 models pretrained on the synthetic corpus.
    #[arg(long, conflicts_with = "full")]
    toy: bool,
    /// 256×256 models from supplied checkpoints.
    #[arg(long)]
    full: bool,
}

impl PresetFlags {
    fn preset(&self) -> Option<Preset> {
        match (self.toy, self.full) {
            (true, _) => Some(Preset::Toy),
            (_, true) => Some(Preset::Full),
            _ => None,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus subject to run when no config is given.
    #[arg(long, conflicts_with = "config")]
    corpus_subject: Option<String>,
    /// Overrides the subject seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "workspace")]
    workspace: PathBuf,
    #[arg(long, value_parser = parse_stage)]
    stage_until: Option<Stage>,
    /// Base-model cache (default: $COEVO_CACHE_DIR or .coevo-cache).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    preset: PresetFlags,
}

#[derive(Args)]
struct ResumeArgs {
    #[arg(long, default_value = "workspace")]
    workspace: PathBuf,
    /// Must match the run's configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_stage)]
    stage_until: Option<Stage>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    preset: PresetFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeKind {
    Off,
    Stub,
    Http,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "workspace")]
    workspace: PathBuf,
    /// Another run's workspace to judge against.
    #[arg(long)]
    against: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "off")]
    judge: JudgeKind,
    /// Seed of the stub judge.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "4-view")]
    layout: Layout,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    size: usize,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: coevo::Error| e.to_string())
}

fn load_config(path: Option<&PathBuf>, corpus: Option<&str>, seed: Option<u64>, preset: Option<Preset>) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match (path, corpus) {
        (Some(p), _) => PipelineConfig::load(p, preset).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(id)) => {
            let mut c = PipelineConfig::toy_for_corpus(id, 0);
            if let Some(p) = preset {
                c = PipelineConfig::preset(p, c.subject);
            }
            c
        }
        (None, None) => bail!("give --config or --corpus-subject"),
    };
    if let Some(s) = seed {
        cfg.subject.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(m: &RunManifest) {
    for r in &m.stages {
        println!(
            "{:<20} {:?} {:>8.1}s {} artifacts",
            r.stage.name(),
            r.status,
            r.seconds,
            r.artifacts.len()
        );
    }
}

#[derive(Serialize)]
struct CorpusEntry<'a> {
    id: &'a str,
    class_noun: &'a str,
    prompt: &'a str,
    views: Vec<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => {
            let cfg = load_config(a.config.as_ref(), a.corpus_subject.as_deref(), a.seed, a.preset.preset())?;
            let opts = RunOptions {
                workspace: a.workspace,
                stage_until: a.stage_until,
                cache_dir: a.cache_dir,
            };
            summarize(&run_pipeline(&cfg, &opts)?);
        }
        Command::Resume(a) => {
            let cfg = match &a.config {
                Some(_) => Some(load_config(a.config.as_ref(), None, a.seed, a.preset.preset())?),
                None => None,
            };
            let opts = RunOptions {
                workspace: a.workspace,
                stage_until: a.stage_until,
                cache_dir: a.cache_dir,
            };
            summarize(&resume(cfg.as_ref(), &opts)?);
        }
        Command::Eval(a) => {
            let mut opts = EvalOptions::new(a.workspace);
            opts.against = a.against;
            opts.layout = a.layout;
            opts.judge = match a.judge {
                JudgeKind::Off => JudgeMode::Off,
                JudgeKind::Stub => JudgeMode::Stub(a.seed),
                JudgeKind::Http => JudgeMode::Http,
            };
            print!("{}", evaluate(&opts)?.render_text());
        }
        Command::MakeCorpus(a) => {
            let corpus = standard_corpus();
            let mut index = Vec::new();
            for s in &corpus {
                let views = s.views(a.size, &Lighting::default())?;
                let files = views.save_pngs(a.out.join(&s.id), "view")?;
                index.push(CorpusEntry {
                    id: &s.id,
                    class_noun: &s.class_noun,
                    prompt: s.prompt(),
                    views: files
                        .iter()
                        .map(|p| p.strip_prefix(&a.out).unwrap_or(p).to_path_buf())
                        .collect(),
                });
            }
            let path = a.out.join("subjects.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&index)?).with_context(|| format!("writing {}", path.display()))?;
            println!("{} subjects written to {}", corpus.len(), a.out.display());
        }
    }
    Ok(())
}
