use coevo_core::checkpoint::{Checkpoint, Provenance};
use coevo_core::denoiser::{DenoiserConfig, PatchDenoiser};
use coevo_core::params::ParamGroup;
use coevo_core::schedule::{build_schedule, ScheduleKind};
use coevo_core::Seed;

fn perturbed(base: &PatchDenoiser, group: ParamGroup) -> PatchDenoiser {
    let mut m = base.clone();
    for v in m.params_mut().group_mut(group) {
        *v += 0.125;
    }
    m
}

#[test]
fn snapshot_restore_round_trip() {
    let m0 = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(3)).unwrap();
    let snap = m0.snapshot();
    let mut m = perturbed(&m0, ParamGroup::Backbone);
    assert_ne!(m.digest(), m0.digest());
    m.restore(&snap).unwrap();
    assert_eq!(m.digest(), m0.digest());
    // Snapshots are copies, not views.
    let mut other = m0.clone();
    other.params_mut().set_flat(0, 9.0);
    assert_ne!(snap.params().get_flat(0), 9.0);
    let wrong = PatchDenoiser::new(DenoiserConfig::gradcheck_tiny(), Seed(3)).unwrap();
    assert!(m.restore(&wrong.snapshot()).is_err());
}

#[test]
fn group_sizes_add_up() {
    for cfg in [DenoiserConfig::personalizer_toy(), DenoiserConfig::multiview_toy(), DenoiserConfig::gradcheck_tiny()] {
        let m = PatchDenoiser::new(cfg, Seed(0)).unwrap();
        let total: usize = m.group_sizes().iter().map(|(_, n)| n).sum();
        assert_eq!(total, m.num_params());
    }
    let tiny = PatchDenoiser::new(DenoiserConfig::gradcheck_tiny(), Seed(0)).unwrap();
    assert!(tiny.num_params() <= 1000);
}

#[test]
fn full_checkpoint_round_trip() {
    let sched = build_schedule(1000, ScheduleKind::VpLinear).unwrap();
    let m = PatchDenoiser::new(DenoiserConfig::multiview_toy(), Seed(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("full.json");
    Checkpoint::full(&m, &sched).save(&path).unwrap();
    let (back, s) = Checkpoint::load(&path).unwrap().into_model().unwrap();
    assert_eq!(back.digest(), m.digest());
    assert_eq!(s.spec(), sched.spec());
    assert_eq!(back.params(), m.params());
}

#[test]
fn delta_applies_only_on_its_base() {
    let sched = build_schedule(1000, ScheduleKind::VpLinear).unwrap();
    let base = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(8)).unwrap();
    let tuned = perturbed(&base, ParamGroup::ImageCrossAttention);
    let ck = Checkpoint::delta(
        &tuned,
        &sched,
        &[ParamGroup::ImageCrossAttention],
        Provenance {
            base_digest: base.digest(),
            seed: 1,
            config: serde_json::json!({}),
        },
    );
    assert!(ck.is_delta());
    assert_eq!(ck.groups.len(), 1);
    assert_eq!(ck.apply_to(&base).unwrap().digest(), tuned.digest());
    assert!(ck.apply_to(&perturbed(&base, ParamGroup::Backbone)).is_err());
    assert!(ck.clone().into_model().is_err());

    let mut bad = ck.clone();
    bad.groups.get_mut("image_cross_attention").unwrap()[0] += 1.0;
    assert!(bad.apply_to(&base).is_err());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, b"{\"format_version\": 1").unwrap();
    assert!(Checkpoint::load(&path).is_err());
    assert!(Checkpoint::load(dir.path().join("missing.json")).is_err());
}
