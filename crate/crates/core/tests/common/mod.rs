#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use coevo_core::denoiser::{DenoiserConfig, PatchDenoiser};
use coevo_core::encoder::ConvEmbedder;
use coevo_core::pretrain::{pretrained_cached, BaseRole, PretrainConfig};
use coevo_core::schedule::{build_schedule, NoiseSchedule, ScheduleKind};
use coevo_core::Seed;

/// Shared with the pipeline tests, so each base model is trained once.
pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("coevo-cache")
}

pub fn schedule() -> NoiseSchedule {
    build_schedule(1000, ScheduleKind::VpLinear).unwrap()
}

pub fn personalizer() -> &'static PatchDenoiser {
    static M: OnceLock<PatchDenoiser> = OnceLock::new();
    M.get_or_init(|| {
        pretrained_cached(
            BaseRole::Personalizer,
            &DenoiserConfig::personalizer_toy(),
            &PretrainConfig::personalizer(),
            Seed(1),
            &ConvEmbedder::standard(),
            &schedule(),
            &cache_dir(),
        )
        .unwrap()
    })
}

pub fn multiview() -> &'static PatchDenoiser {
    static M: OnceLock<PatchDenoiser> = OnceLock::new();
    M.get_or_init(|| {
        pretrained_cached(
            BaseRole::Multiview,
            &DenoiserConfig::multiview_toy(),
            &PretrainConfig::multiview(),
            Seed(2),
            &ConvEmbedder::standard(),
            &schedule(),
            &cache_dir(),
        )
        .unwrap()
    })
}
