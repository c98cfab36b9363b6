//! Paired comparison of the cascade before and after co-evolution on corpus
//! subjects with known ground-truth views.

use std::path::Path;

use coevo_core::camera::Lighting;
use coevo_core::encoder::ConvEmbedder;
use coevo_core::Seed;
use coevo_eval::{render_turntable, Asset, TurntableConfig, WordProbeClip};
use coevo_recon::fit_gaussians;
use serde::{Deserialize, Serialize};

use crate::cascade::{cascade_prompt, cascade_sample, subject_distance};
use crate::config::{CascadeMode, PipelineConfig};
use crate::eval::retrieval_scores;
use crate::manifest::Stage;
use crate::models::BaseModels;
use crate::run::{resolve_subject, run_pipeline, stage_seed, RunOptions, CASCADE_BATCH};
use crate::Result;

/// Embedder used only to score subject distance, never for conditioning.
pub fn distance_encoder() -> ConvEmbedder {
    ConvEmbedder::new("subject-distance-probe", Seed(0xd157), 16, 64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub subject: String,
    pub distance_base: f64,
    pub distance_optimized: f64,
    /// Mean toy R-Precision over the encoder family, Gaussian turntables.
    pub r_precision_base: f64,
    pub r_precision_optimized: f64,
    pub seconds: f64,
}

impl PairedOutcome {
    pub fn optimized_wins(&self) -> bool {
        self.distance_optimized < self.distance_base
    }
}

fn mean_r_precision(
    cfg: &PipelineConfig,
    batch: &coevo_core::views::MultiViewBatch,
    family: &[WordProbeClip],
    prompt: &str,
    turntable: &TurntableConfig,
) -> Result<f64> {
    let fit = fit_gaussians(batch, &cfg.reconstruction.fit, stage_seed(cfg, Stage::Reconstruction))?;
    let renders = render_turntable(Asset::Gaussians(&fit.gaussians), turntable)?.items();
    let scores = retrieval_scores(family, &renders, prompt)?;
    Ok(scores.iter().map(|r| r.score).sum::<f64>() / scores.len() as f64)
}

/// Runs `cfg` through the cascade in `workspace`, samples the cascade again
/// from the base models with the same seed, and scores both against the
/// corpus subject's ground-truth views. `cfg` must name a corpus subject.
pub fn paired_outcome(
    cfg: &PipelineConfig,
    base: &BaseModels,
    workspace: &Path,
    cache_dir: Option<&Path>,
    family: &[WordProbeClip],
    turntable: &TurntableConfig,
) -> Result<PairedOutcome> {
    let clock = std::time::Instant::now();
    let subject = resolve_subject(cfg)?;
    let corpus = subject
        .corpus
        .clone()
        .ok_or_else(|| crate::Error::Config("paired comparison needs a corpus subject".into()))?;
    let opts = RunOptions {
        workspace: workspace.to_path_buf(),
        stage_until: Some(Stage::CascadeSample),
        cache_dir: cache_dir.map(Path::to_path_buf),
    };
    run_pipeline(cfg, &opts)?;
    let bytes = std::fs::read(workspace.join(CASCADE_BATCH)).map_err(|e| crate::Error::io(workspace, e))?;
    let optimized: coevo_core::views::MultiViewBatch = serde_json::from_slice(&bytes)?;
    let prompt = cascade_prompt(&cfg.subject.identifier, &subject.class_noun, &cfg.subject.text);
    let baseline = cascade_sample(
        &base.personalizer,
        &base.multiview,
        &ConvEmbedder::standard(),
        &subject.image,
        &prompt,
        CascadeMode::Cascade,
        &base.schedule,
        &cfg.sampler,
        stage_seed(cfg, Stage::CascadeSample),
    )?;
    let truth = corpus.views(cfg.base_models.multiview.image_size, &Lighting::default())?;
    let probe = distance_encoder();
    let caption = subject.prompt.clone().unwrap_or_default();
    Ok(PairedOutcome {
        subject: subject.id,
        distance_base: subject_distance(&baseline, &truth, &probe)?,
        distance_optimized: subject_distance(&optimized, &truth, &probe)?,
        r_precision_base: mean_r_precision(cfg, &baseline, family, &caption, turntable)?,
        r_precision_optimized: mean_r_precision(cfg, &optimized, family, &caption, turntable)?,
        seconds: clock.elapsed().as_secs_f64(),
    })
}
