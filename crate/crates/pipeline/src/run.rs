//! Stage runner. Every stage reads its inputs from the workspace and writes
//! its outputs there, so a run interrupted after stage k resumes from disk
//! and produces the same bytes as an uninterrupted one.

use std::path::{Path, PathBuf};
use std::time::Instant;

use coevo_core::camera::{Direction, Lighting};
use coevo_core::checkpoint::{Checkpoint, Provenance};
use coevo_core::corpus::{standard_corpus, Subject};
use coevo_core::denoiser::PatchDenoiser;
use coevo_core::encoder::ConvEmbedder;
use coevo_core::image::{load_png, resize, save_png, Image};
use coevo_core::mvdiffusion::{generate_multiviews, subject_prior_optimize, with_estimated_normals};
use coevo_core::normals::ShadingNormalEstimator;
use coevo_core::params::ParamGroup;
use coevo_core::personalizer::{build_view_prompts, identity_aware_optimize};
use coevo_core::views::MultiViewBatch;
use coevo_core::Seed;
use coevo_recon::{bake_field, default_iso, export_mesh, extract_mesh, fit_gaussians};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::cascade::{cascade_prompt, cascade_sample, diversify_views, expect_digest};
use crate::config::{PipelineConfig, Preset};
use crate::manifest::{sha256_file, Artifact, CheckpointId, RunManifest, Stage, StageRecord, StageStatus, SCHEMA_VERSION};
use crate::models::{base_models, cache_dir, BaseModels};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const STAGE1_CHECKPOINT: &str = "checkpoints/personalizer_stage1.json";
pub const STAGE2_CHECKPOINT: &str = "checkpoints/multiview_stage2.json";
pub const LIFT_BATCH: &str = "multiview_lift/batch.json";
pub const DIVERSE_BATCH: &str = "diversify/batch.json";
pub const CASCADE_BATCH: &str = "cascade_sample/batch.json";
pub const GAUSSIANS: &str = "reconstruction/gaussians.json";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub workspace: PathBuf,
    /// Stop after this stage.
    pub stage_until: Option<Stage>,
    /// Base-model cache; see [`crate::models::cache_dir`].
    pub cache_dir: Option<PathBuf>,
}

/// The subject image and what the stages need to know about it.
#[derive(Clone, Debug)]
pub struct ResolvedSubject {
    pub id: String,
    pub image: Image,
    pub class_noun: String,
    /// Reference caption, when known.
    pub prompt: Option<String>,
    /// Corpus subject, when the image came from the corpus.
    pub corpus: Option<Subject>,
}

pub fn resolve_subject(cfg: &PipelineConfig) -> Result<ResolvedSubject> {
    let s = &cfg.subject;
    let size = cfg.base_models.personalizer.image_size;
    if let Some(id) = &s.corpus_subject {
        let subject = standard_corpus()
            .into_iter()
            .find(|c| &c.id == id)
            .ok_or_else(|| Error::Config(format!("no corpus subject `{id}`")))?;
        let image = subject.render(&Direction::Front.camera(), size, &Lighting::default()).color;
        return Ok(ResolvedSubject {
            id: id.clone(),
            image,
            class_noun: s.class_noun.clone().unwrap_or_else(|| subject.class_noun.clone()),
            prompt: Some(s.prompt.clone().unwrap_or_else(|| subject.prompt().to_string())),
            corpus: Some(subject),
        });
    }
    let path = s.image.as_ref().expect("validated: image or corpus subject");
    let image = load_png(path)?;
    if !image.iter().all(|v| v.is_finite()) {
        return Err(Error::Config(format!("{} has non-finite pixels", path.display())));
    }
    Ok(ResolvedSubject {
        id: path.file_stem().and_then(|x| x.to_str()).unwrap_or("subject").to_string(),
        image: resize(&image, size),
        class_noun: s.class_noun.clone().expect("validated: class noun with image"),
        prompt: s.prompt.clone(),
        corpus: None,
    })
}

/// Seed of a stage's stream.
pub fn stage_seed(cfg: &PipelineConfig, stage: Stage) -> Seed {
    Seed(cfg.subject.seed).derive(stage.name())
}

fn write_bytes(ws: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let p = ws.join(rel);
    if let Some(dir) = p.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
}

fn write_json<T: Serialize>(ws: &Path, rel: &str, value: &T) -> Result<()> {
    write_bytes(ws, rel, &serde_json::to_vec(value)?)
}

fn read_json<T: DeserializeOwned>(ws: &Path, rel: &str) -> Result<T> {
    let p = ws.join(rel);
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

struct Outputs {
    files: Vec<PathBuf>,
    checkpoints: Vec<CheckpointId>,
}

impl Outputs {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    fn file(&mut self, rel: impl Into<PathBuf>) {
        self.files.push(rel.into());
    }

    fn batch(&mut self, ws: &Path, rel: &str, batch: &MultiViewBatch) -> Result<()> {
        write_json(ws, rel, batch)?;
        self.file(rel);
        let dir = Path::new(rel).parent().expect("batch path has a directory");
        for p in batch.save_pngs(ws.join(dir), "view")? {
            self.file(dir.join(p.file_name().expect("png file name")));
        }
        Ok(())
    }
}

/// A run in progress: resolved config, models and workspace.
struct Runner<'a> {
    cfg: &'a PipelineConfig,
    ws: &'a Path,
    encoder: ConvEmbedder,
    base: BaseModels,
    subject: ResolvedSubject,
}

impl Runner<'_> {
    fn delta(&self, rel: &str, base: &PatchDenoiser) -> Result<PatchDenoiser> {
        Ok(Checkpoint::load(self.ws.join(rel))?.apply_to(base)?)
    }

    fn execute(&self, stage: Stage, manifest: &RunManifest) -> Result<Outputs> {
        let (cfg, ws) = (self.cfg, self.ws);
        let sched = &self.base.schedule;
        let seed = stage_seed(cfg, stage);
        let mut out = Outputs::new();
        match stage {
            Stage::MultiviewLift => {
                let dir = ws.join(stage.name());
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                save_png(&self.subject.image, dir.join("subject.png"))?;
                out.file("multiview_lift/subject.png");
                let lift = generate_multiviews(
                    &self.base.multiview,
                    &self.encoder,
                    &self.subject.image,
                    sched,
                    &cfg.sampler,
                    seed,
                )?;
                let lift = MultiViewBatch {
                    subject_id: self.subject.id.clone(),
                    ..lift
                };
                out.batch(ws, LIFT_BATCH, &lift)?;
            }
            Stage::IdentityAwareOpt => {
                let lift: MultiViewBatch = read_json(ws, LIFT_BATCH)?;
                let prompts = build_view_prompts(&cfg.subject.identifier, &self.subject.class_noun)?;
                let base = &self.base.personalizer;
                let trained =
                    identity_aware_optimize(base, &lift, &prompts, &self.encoder, &cfg.personalizer, sched, seed)?;
                let ckpt = Checkpoint::delta(
                    &trained.model,
                    sched,
                    &[ParamGroup::ImageCrossAttention],
                    Provenance {
                        base_digest: base.digest(),
                        seed: seed.0,
                        config: serde_json::to_value(&cfg.personalizer)?,
                    },
                );
                write_json(ws, STAGE1_CHECKPOINT, &ckpt)?;
                out.file(STAGE1_CHECKPOINT);
                out.checkpoints.push(CheckpointId {
                    name: "personalizer_stage1".into(),
                    digest: ckpt.digest,
                });
                write_json(ws, "identity_aware_opt/losses.json", &trained.losses)?;
                out.file("identity_aware_opt/losses.json");
            }
            Stage::Diversify => {
                let lift: MultiViewBatch = read_json(ws, LIFT_BATCH)?;
                let diverse = diversify_views(
                    &self.base.personalizer,
                    &manifest.base_personalizer.digest,
                    &lift,
                    &cfg.subject.text,
                    &self.encoder,
                    sched,
                    &cfg.sampler,
                    seed,
                )?;
                let diverse = with_estimated_normals(&diverse, &ShadingNormalEstimator::default())?;
                out.batch(ws, DIVERSE_BATCH, &diverse)?;
            }
            Stage::SubjectPriorOpt => {
                let diverse: MultiViewBatch = read_json(ws, DIVERSE_BATCH)?;
                let base = &self.base.multiview;
                let trained = subject_prior_optimize(
                    base,
                    &self.encoder,
                    &diverse,
                    &self.subject.image,
                    &cfg.multiview,
                    sched,
                    seed,
                )?;
                let ckpt = Checkpoint::delta(
                    &trained.model,
                    sched,
                    &[ParamGroup::CrossDomainSelfAttention],
                    Provenance {
                        base_digest: base.digest(),
                        seed: seed.0,
                        config: serde_json::to_value(&cfg.multiview)?,
                    },
                );
                write_json(ws, STAGE2_CHECKPOINT, &ckpt)?;
                out.file(STAGE2_CHECKPOINT);
                out.checkpoints.push(CheckpointId {
                    name: "multiview_stage2".into(),
                    digest: ckpt.digest,
                });
                write_json(ws, "subject_prior_opt/losses.json", &trained.losses)?;
                out.file("subject_prior_opt/losses.json");
            }
            Stage::CascadeSample => {
                let pc = self.delta(STAGE1_CHECKPOINT, &self.base.personalizer)?;
                let pm = self.delta(STAGE2_CHECKPOINT, &self.base.multiview)?;
                expect_digest("optimized personalizer", &pc, &recorded_digest(manifest, Stage::IdentityAwareOpt)?)?;
                expect_digest("optimized multi-view", &pm, &recorded_digest(manifest, Stage::SubjectPriorOpt)?)?;
                let prompt = cascade_prompt(&cfg.subject.identifier, &self.subject.class_noun, &cfg.subject.text);
                let batch = cascade_sample(
                    &pc,
                    &pm,
                    &self.encoder,
                    &self.subject.image,
                    &prompt,
                    cfg.cascade,
                    sched,
                    &cfg.sampler,
                    seed,
                )?;
                let batch = MultiViewBatch {
                    subject_id: self.subject.id.clone(),
                    ..batch
                };
                out.batch(ws, CASCADE_BATCH, &batch)?;
            }
            Stage::Reconstruction => {
                let batch: MultiViewBatch = read_json(ws, CASCADE_BATCH)?;
                let rc = &cfg.reconstruction;
                let fit = fit_gaussians(&batch, &rc.fit, seed)?;
                write_json(ws, GAUSSIANS, &fit.gaussians)?;
                out.file(GAUSSIANS);
                write_json(ws, "reconstruction/fit_log.json", &fit.checkpoints)?;
                out.file("reconstruction/fit_log.json");
                let field = bake_field(&fit.gaussians, rc.field_resolution, rc.half_extent)?;
                let mesh = extract_mesh(&field, rc.iso.unwrap_or_else(|| default_iso(&field)))?;
                for format in &rc.mesh_formats {
                    let rel = format!("reconstruction/mesh.{}", format.extension());
                    export_mesh(&mesh, *format, ws.join(&rel))?;
                    out.file(rel);
                }
            }
        }
        Ok(out)
    }
}

fn recorded_digest(manifest: &RunManifest, stage: Stage) -> Result<String> {
    manifest
        .record(stage)
        .and_then(|r| r.checkpoints.first())
        .map(|c| c.digest.clone())
        .ok_or_else(|| Error::Manifest(format!("stage {stage} recorded no checkpoint")))
}

fn checkpoint_id(name: &str, model: &PatchDenoiser) -> CheckpointId {
    CheckpointId {
        name: name.into(),
        digest: model.digest(),
    }
}

fn drive(cfg: &PipelineConfig, opts: &RunOptions, mut manifest: RunManifest, base: BaseModels) -> Result<RunManifest> {
    let ws = opts.workspace.as_path();
    let runner = Runner {
        cfg,
        ws,
        encoder: ConvEmbedder::standard(),
        base,
        subject: resolve_subject(cfg)?,
    };
    let start = manifest.last_completed().map_or(0, |s| s.index() + 1);
    let end = opts.stage_until.map_or(Stage::ALL.len(), |s| s.index() + 1);
    for &stage in Stage::ALL.iter().take(end).skip(start) {
        let clock = Instant::now();
        let result = runner.execute(stage, &manifest);
        let seconds = clock.elapsed().as_secs_f64();
        let seed = stage_seed(cfg, stage).0;
        match result {
            Ok(out) => {
                let artifacts = out
                    .files
                    .into_iter()
                    .map(|path| {
                        let sha256 = sha256_file(&ws.join(&path))?;
                        Ok(Artifact { path, sha256 })
                    })
                    .collect::<Result<Vec<_>>>()?;
                manifest.stages.push(StageRecord {
                    stage,
                    status: StageStatus::Completed,
                    seconds,
                    seed,
                    checkpoints: out.checkpoints,
                    artifacts,
                    error: None,
                });
                manifest.save(ws)?;
            }
            Err(e) => {
                let message = e.to_string();
                manifest.stages.push(StageRecord {
                    stage,
                    status: StageStatus::Failed,
                    seconds,
                    seed,
                    checkpoints: Vec::new(),
                    artifacts: Vec::new(),
                    error: Some(message.clone()),
                });
                manifest.save(ws)?;
                return Err(Error::StageFailed { stage, message });
            }
        }
    }
    Ok(manifest)
}

fn models_for(cfg: &PipelineConfig, opts: &RunOptions) -> Result<BaseModels> {
    base_models(&cfg.base_models, &ConvEmbedder::standard(), &cache_dir(opts.cache_dir.as_deref()))
}

/// Runs `cfg` from the first stage in a fresh workspace. Any previous run in
/// the workspace is replaced.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let ws = opts.workspace.as_path();
    std::fs::create_dir_all(ws).map_err(|e| Error::io(ws, e))?;
    for stage in Stage::ALL {
        let dir = ws.join(stage.name());
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    let old = ws.join("checkpoints");
    if old.exists() {
        std::fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    write_bytes(ws, CONFIG_FILE, cfg.to_toml()?.as_bytes())?;
    let base = models_for(cfg, opts)?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        root_seed: cfg.subject.seed,
        base_personalizer: checkpoint_id("base_personalizer", &base.personalizer),
        base_multiview: checkpoint_id("base_multiview", &base.multiview),
        stages: Vec::new(),
    };
    manifest.save(ws)?;
    drive(cfg, opts, manifest, base)
}

/// Loads a config file and runs it.
pub fn run_pipeline_file(path: &Path, preset: Option<Preset>, opts: &RunOptions) -> Result<RunManifest> {
    run_pipeline(&PipelineConfig::load(path, preset)?, opts)
}

/// The workspace's config and manifest, checked against each other and
/// against the files on disk.
pub fn load_run(workspace: &Path) -> Result<(PipelineConfig, RunManifest)> {
    let manifest = RunManifest::load(workspace)?;
    let cfg_path = workspace.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg = PipelineConfig::from_toml_str(&text, None, workspace)?;
    if cfg.hash() != manifest.config_hash {
        return Err(Error::ConfigHashMismatch {
            recorded: manifest.config_hash.clone(),
            current: cfg.hash(),
        });
    }
    manifest.verify_artifacts(workspace)?;
    Ok((cfg, manifest))
}

/// Continues a run after its last completed stage. When `config` is given
/// its hash must match the run's.
pub fn resume(config: Option<&PipelineConfig>, opts: &RunOptions) -> Result<RunManifest> {
    let ws = opts.workspace.as_path();
    let (cfg, mut manifest) = load_run(ws)?;
    if let Some(c) = config {
        if c.hash() != manifest.config_hash {
            return Err(Error::ConfigHashMismatch {
                recorded: manifest.config_hash.clone(),
                current: c.hash(),
            });
        }
    }
    manifest.stages.retain(|r| r.status == StageStatus::Completed);
    let base = models_for(&cfg, opts)?;
    expect_digest("base personalizer", &base.personalizer, &manifest.base_personalizer.digest)?;
    expect_digest("base multi-view", &base.multiview, &manifest.base_multiview.digest)?;
    drive(&cfg, opts, manifest, base)
}
