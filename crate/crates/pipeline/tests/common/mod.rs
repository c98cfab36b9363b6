#![allow(dead_code)]

use std::path::PathBuf;

use coevo::config::PipelineConfig;
use coevo::models::{base_models, BaseModels};
use coevo::run::RunOptions;
use coevo_core::encoder::ConvEmbedder;

/// Shared with the core tests, so each base model is trained once.
pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("coevo-cache")
}

pub fn toy(subject: &str, seed: u64) -> PipelineConfig {
    PipelineConfig::toy_for_corpus(subject, seed)
}

pub fn options(workspace: impl Into<PathBuf>) -> RunOptions {
    RunOptions {
        workspace: workspace.into(),
        stage_until: None,
        cache_dir: Some(cache_dir()),
    }
}

pub fn models() -> BaseModels {
    let cfg = toy("subject-00", 0);
    base_models(&cfg.base_models, &ConvEmbedder::standard(), &cache_dir()).unwrap()
}
