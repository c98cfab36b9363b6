//! Evaluation of a finished run: turntable retrieval precision of the
//! Gaussians and the mesh, and an optional pairwise judgment against
//! another run.

use std::path::{Path, PathBuf};

use coevo_core::corpus::{standard_corpus, TRAIN_SUBJECTS};
use coevo_eval::judge::{instruction, HttpTransport};
use coevo_eval::retrieval::{corpus_samples, toy_clip_family};
use coevo_eval::stub::{StubPolicy, StubTransport};
use coevo_eval::{
    clip_r_precision, eval_report, render_turntable, vision_judge_compare, Asset, EncoderPair, EvalReport, JudgeClient,
    Layout, PairwiseJudgment, RPrecisionReport, TurntableConfig, WordProbeClip,
};
use coevo_core::image::Image;
use coevo_recon::{import_mesh, GaussianSet, TriMesh};

use crate::manifest::Stage;
use crate::run::{load_run, resolve_subject, GAUSSIANS};
use crate::{Error, Result};

pub const EVAL_DIR: &str = "eval";

#[derive(Clone, Debug, PartialEq)]
pub enum JudgeMode {
    Off,
    /// Offline judge with a fixed seeded policy.
    Stub(u64),
    /// HTTP judge configured from the environment.
    Http,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub workspace: PathBuf,
    /// Second run to judge this one against.
    pub against: Option<PathBuf>,
    pub judge: JudgeMode,
    pub layout: Layout,
    pub turntable: TurntableConfig,
}

impl EvalOptions {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        Self {
            workspace: workspace.into(),
            against: None,
            judge: JudgeMode::Off,
            layout: Layout::FourView,
            turntable: TurntableConfig::default(),
        }
    }
}

struct Assets {
    gaussians: GaussianSet,
    mesh: TriMesh,
}

fn load_assets(ws: &Path) -> Result<(Assets, Option<String>)> {
    let (cfg, manifest) = load_run(ws)?;
    if manifest.record(Stage::Reconstruction).is_none() {
        return Err(Error::Manifest(format!("{} has no completed reconstruction", ws.display())));
    }
    let p = ws.join(GAUSSIANS);
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let gaussians: GaussianSet = serde_json::from_slice(&bytes)?;
    let format = cfg.reconstruction.mesh_formats[0];
    let mesh = import_mesh(ws.join(format!("reconstruction/mesh.{}", format.extension())), format)?;
    let prompt = resolve_subject(&cfg)?.prompt;
    Ok((Assets { gaussians, mesh }, prompt))
}

fn judge_client(mode: &JudgeMode) -> Result<Option<JudgeClient>> {
    Ok(match mode {
        JudgeMode::Off => None,
        JudgeMode::Stub(seed) => Some(JudgeClient::new(StubTransport::new(StubPolicy::Seeded(*seed)))),
        JudgeMode::Http => Some(JudgeClient::new(HttpTransport::from_env()?)),
    })
}

/// The toy encoders, fitted on turntables of the training subjects.
pub fn toy_encoders() -> Result<Vec<WordProbeClip>> {
    let corpus = standard_corpus();
    Ok(toy_clip_family(&corpus_samples(&corpus[..TRAIN_SUBJECTS], 12, 40.0, 32))?)
}

/// Retrieval precision of `renders` against the corpus prompts, for each
/// encoder in `family`.
pub fn retrieval_scores(family: &[WordProbeClip], renders: &[Image], true_prompt: &str) -> Result<Vec<RPrecisionReport>> {
    let corpus = standard_corpus();
    let distractors: Vec<String> = corpus
        .iter()
        .map(|s| s.prompt().to_string())
        .filter(|p| p != true_prompt)
        .collect();
    family
        .iter()
        .map(|enc| {
            Ok(clip_r_precision(renders, true_prompt, &distractors, enc as &dyn EncoderPair)?
                .with_gallery(format!("corpus prompts ({} distractors)", distractors.len())))
        })
        .collect()
}

/// Evaluates the run in `opts.workspace` and writes the report to its
/// `eval/` directory.
pub fn evaluate(opts: &EvalOptions) -> Result<EvalReport> {
    let (assets, prompt) = load_assets(&opts.workspace)?;
    let prompt = prompt.ok_or_else(|| Error::Config("retrieval needs `subject.prompt`".into()))?;
    let tt = &opts.turntable;
    let family = toy_encoders()?;
    let mut scores = Vec::new();
    for (method, asset) in [
        ("gaussians", Asset::Gaussians(&assets.gaussians)),
        ("mesh", Asset::Mesh(&assets.mesh)),
    ] {
        let renders = render_turntable(asset, tt)?.items();
        for r in retrieval_scores(&family, &renders, &prompt)? {
            scores.push((method.to_string(), r.with_elevation(tt.elevation_deg)));
        }
    }
    let mut judgments: Vec<(String, String, PairwiseJudgment)> = Vec::new();
    if let (Some(other), Some(client)) = (&opts.against, judge_client(&opts.judge)?) {
        let (theirs, _) = load_assets(other)?;
        let text = instruction(&prompt, opts.layout);
        let a = tiles(&assets.mesh, opts.layout, tt)?;
        let b = tiles(&theirs.mesh, opts.layout, tt)?;
        let j = vision_judge_compare(&a, &b, &text, opts.layout, &client)?;
        judgments.push((
            opts.workspace.display().to_string(),
            other.display().to_string(),
            j,
        ));
    }
    let report = eval_report(&scores, &judgments)?;
    report.write(opts.workspace.join(EVAL_DIR))?;
    Ok(report)
}

fn tiles(mesh: &TriMesh, layout: Layout, tt: &TurntableConfig) -> Result<Vec<Image>> {
    let cfg = TurntableConfig {
        n_azimuth: layout.views(),
        ..tt.clone()
    };
    Ok(render_turntable(Asset::Mesh(mesh), &cfg)?.items())
}
