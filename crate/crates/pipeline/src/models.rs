//! Base models: loaded from configured checkpoints, or pretrained on the
//! synthetic corpus and cached on disk.

use std::path::{Path, PathBuf};

use coevo_core::checkpoint::Checkpoint;
use coevo_core::denoiser::{DenoiserConfig, PatchDenoiser};
use coevo_core::encoder::ConvEmbedder;
use coevo_core::pretrain::{pretrained_cached, BaseRole, PretrainConfig};
use coevo_core::schedule::{build_schedule, NoiseSchedule};
use coevo_core::Seed;

use crate::config::BaseModelConfig;
use crate::{Error, Result};

pub const CACHE_ENV: &str = "COEVO_CACHE_DIR";

#[derive(Clone, Debug)]
pub struct BaseModels {
    pub personalizer: PatchDenoiser,
    pub multiview: PatchDenoiser,
    pub schedule: NoiseSchedule,
}

/// Cache directory: `explicit`, else `$COEVO_CACHE_DIR`, else
/// `.coevo-cache` under the current directory.
pub fn cache_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".coevo-cache"))
}

#[allow(clippy::too_many_arguments)]
fn obtain(
    role: BaseRole,
    model: &DenoiserConfig,
    pretrain: &PretrainConfig,
    seed: u64,
    checkpoint: Option<&Path>,
    encoder: &ConvEmbedder,
    sched: &NoiseSchedule,
    cache: &Path,
) -> Result<PatchDenoiser> {
    let Some(path) = checkpoint else {
        return Ok(pretrained_cached(role, model, pretrain, Seed(seed), encoder, sched, cache)?);
    };
    let (loaded, _) = Checkpoint::load(path)?.into_model()?;
    if loaded.config() != model {
        return Err(Error::Config(format!(
            "checkpoint {} does not match the configured {} model",
            path.display(),
            role.name()
        )));
    }
    Ok(loaded)
}

pub fn base_models(cfg: &BaseModelConfig, encoder: &ConvEmbedder, cache: &Path) -> Result<BaseModels> {
    let p = &cfg.personalizer;
    if (p.num_train_steps, p.schedule) != (cfg.multiview.num_train_steps, cfg.multiview.schedule) {
        return Err(Error::Config("base models must share one noise schedule".into()));
    }
    let schedule = build_schedule(p.num_train_steps, p.schedule)?;
    let personalizer = obtain(
        BaseRole::Personalizer,
        p,
        &cfg.personalizer_pretrain,
        cfg.personalizer_seed,
        cfg.personalizer_checkpoint.as_deref(),
        encoder,
        &schedule,
        cache,
    )?;
    let multiview = obtain(
        BaseRole::Multiview,
        &cfg.multiview,
        &cfg.multiview_pretrain,
        cfg.multiview_seed,
        cfg.multiview_checkpoint.as_deref(),
        encoder,
        &schedule,
        cache,
    )?;
    Ok(BaseModels {
        personalizer,
        multiview,
        schedule,
    })
}
