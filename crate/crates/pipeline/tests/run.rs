mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use coevo::manifest::{sha256_file, RunManifest, Stage, StageStatus, MANIFEST_FILE};
use coevo::run::{load_run, resume, run_pipeline, CASCADE_BATCH, GAUSSIANS};
use coevo::Error;

/// Hash of every artifact file the manifest lists.
fn artifact_hashes(ws: &Path) -> BTreeMap<PathBuf, String> {
    let m = RunManifest::load(ws).unwrap();
    m.completed()
        .flat_map(|r| r.artifacts.iter())
        .map(|a| (a.path.clone(), sha256_file(&ws.join(&a.path)).unwrap()))
        .collect()
}

#[test]
fn reruns_and_resumed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::toy("subject-05", 11);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));

    let m = run_pipeline(&cfg, &common::options(&a)).unwrap();
    assert_eq!(m.stages.len(), Stage::ALL.len());
    assert!(m.stages.iter().all(|r| r.status == StageStatus::Completed));
    run_pipeline(&cfg, &common::options(&b)).unwrap();

    let mut opts = common::options(&c);
    opts.stage_until = Some(Stage::Diversify);
    let partial = run_pipeline(&cfg, &opts).unwrap();
    assert_eq!(partial.last_completed(), Some(Stage::Diversify));
    assert!(!c.join(GAUSSIANS).exists());
    resume(Some(&cfg), &common::options(&c)).unwrap();

    let ha = artifact_hashes(&a);
    assert!(ha.contains_key(Path::new(GAUSSIANS)));
    assert!(ha.contains_key(Path::new(CASCADE_BATCH)));
    assert_eq!(ha, artifact_hashes(&b));
    assert_eq!(ha, artifact_hashes(&c));
    assert!(a.join(MANIFEST_FILE).exists());

    // Resuming a finished run does nothing.
    let done = resume(None, &common::options(&a)).unwrap();
    assert_eq!(done.stages.len(), Stage::ALL.len());
    assert_eq!(ha, artifact_hashes(&a));

    // Integrity checks on the finished run.
    let other = common::toy("subject-05", 12);
    assert!(matches!(resume(Some(&other), &common::options(&a)), Err(Error::ConfigHashMismatch { .. })));

    let mesh = a.join("reconstruction/mesh.obj");
    let original = std::fs::read(&mesh).unwrap();
    std::fs::write(&mesh, b"tampered").unwrap();
    assert!(matches!(load_run(&a), Err(Error::TamperedArtifact { .. })));
    std::fs::remove_file(&mesh).unwrap();
    assert!(matches!(load_run(&a), Err(Error::MissingArtifact { .. })));
    std::fs::write(&mesh, original).unwrap();
    load_run(&a).unwrap();

    let cfg_path = a.join("config.toml");
    let text = std::fs::read_to_string(&cfg_path).unwrap();
    std::fs::write(&cfg_path, text.replace("seed = 11", "seed = 13")).unwrap();
    assert!(matches!(load_run(&a), Err(Error::ConfigHashMismatch { .. })));
}

#[test]
fn failed_stage_is_recorded_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let cfg = common::toy("subject-02", 4);
    let mut opts = common::options(&ws);
    opts.stage_until = Some(Stage::IdentityAwareOpt);
    run_pipeline(&cfg, &opts).unwrap();

    // Stage one cannot run without the lifted batch.
    let lift = ws.join("multiview_lift/batch.json");
    let saved = std::fs::read(&lift).unwrap();
    std::fs::remove_file(&lift).unwrap();
    let mut m = RunManifest::load(&ws).unwrap();
    m.stages.retain(|r| r.stage == Stage::MultiviewLift);
    m.stages[0].artifacts.retain(|a| a.path != Path::new("multiview_lift/batch.json"));
    m.save(&ws).unwrap();
    let err = resume(None, &common::options(&ws)).unwrap_err();
    assert!(matches!(err, Error::StageFailed { stage: Stage::IdentityAwareOpt, .. }), "{err}");
    let failed = RunManifest::load(&ws).unwrap();
    let last = failed.stages.last().unwrap();
    assert_eq!(last.status, StageStatus::Failed);
    assert!(last.error.is_some());

    std::fs::write(&lift, saved).unwrap();
    let mut opts = common::options(&ws);
    opts.stage_until = Some(Stage::Diversify);
    let m = resume(None, &opts).unwrap();
    assert_eq!(m.last_completed(), Some(Stage::Diversify));
    assert!(m.stages.iter().all(|r| r.status == StageStatus::Completed));
}

#[test]
fn out_of_order_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let cfg = common::toy("subject-01", 1);
    let mut opts = common::options(ws);
    opts.stage_until = Some(Stage::MultiviewLift);
    let mut m = run_pipeline(&cfg, &opts).unwrap();
    let mut rec = m.stages[0].clone();
    rec.stage = Stage::Diversify;
    m.stages.push(rec);
    m.save(ws).unwrap();
    assert!(matches!(RunManifest::load(ws), Err(Error::Manifest(_))));
}
