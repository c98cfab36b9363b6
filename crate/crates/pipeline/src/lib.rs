//! End-to-end subject-driven generation: lift a subject image to six views,
//! co-evolve the personalized and multi-view models, sample the final views
//! through the cascade and reconstruct a mesh. Runs are persisted in a
//! workspace directory with a manifest and can be resumed stage by stage.

use std::path::{Path, PathBuf};

pub mod cascade;
pub mod config;
pub mod eval;
pub mod manifest;
pub mod models;
pub mod run;
pub mod study;

pub use cascade::{cascade_sample, diversify_views, sample_rest, sample_view1, subject_distance, CascadeStreams};
pub use config::{CascadeMode, PipelineConfig, Preset, SubjectSpec};
pub use manifest::{RunManifest, Stage, StageRecord, StageStatus};
pub use run::{load_run, resume, run_pipeline, run_pipeline_file, RunOptions};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("stage {stage}: missing artifact {path}")]
    MissingArtifact { stage: Stage, path: PathBuf },

    #[error("artifact {path} was modified: recorded sha256 {recorded}, found {actual}")]
    TamperedArtifact {
        path: PathBuf,
        recorded: String,
        actual: String,
    },

    #[error("config hash {current} does not match the run's {recorded}")]
    ConfigHashMismatch { recorded: String, current: String },

    #[error("{role} model has digest {actual}, expected {expected}")]
    Provenance {
        role: &'static str,
        expected: String,
        actual: String,
    },

    #[error("stage {stage} failed: {message}")]
    StageFailed { stage: Stage, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] coevo_core::Error),

    #[error(transparent)]
    Recon(#[from] coevo_recon::Error),

    #[error(transparent)]
    Eval(#[from] coevo_eval::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
