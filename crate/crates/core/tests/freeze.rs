use std::time::Instant;

use coevo_core::corpus::standard_corpus;
use coevo_core::denoiser::{DenoiserConfig, PatchDenoiser};
use coevo_core::encoder::ConvEmbedder;
use coevo_core::mvdiffusion::{subject_prior_optimize, MVTrainConfig};
use coevo_core::params::{ParamGroup, ParamSet};
use coevo_core::personalizer::{build_view_prompts, identity_aware_optimize, PersonalizerTrainConfig};
use coevo_core::schedule::{build_schedule, ScheduleKind};
use coevo_core::camera::Lighting;
use coevo_core::Seed;

fn assert_only_changed(before: &ParamSet, after: &ParamSet, trainable: ParamGroup) {
    for g in ParamGroup::ALL {
        let same = before.group(g).iter().zip(after.group(g)).all(|(a, b)| a.to_bits() == b.to_bits());
        if g == trainable {
            assert!(!same, "{g} did not change");
        } else {
            assert!(same, "{g} changed");
        }
    }
}

#[test]
fn each_stage_updates_only_its_group() {
    let clock = Instant::now();
    let sched = build_schedule(1000, ScheduleKind::VpLinear).unwrap();
    let encoder = ConvEmbedder::standard();
    let corpus = standard_corpus();
    let p_cfg = PersonalizerTrainConfig {
        iterations: 2,
        ..PersonalizerTrainConfig::toy()
    };
    let m_cfg = MVTrainConfig {
        iterations: 2,
        ..MVTrainConfig::toy()
    };
    for k in 0..20u64 {
        let seed = Seed(1000 + k);
        let subject = &corpus[k as usize % corpus.len()];
        let views = subject.views(32, &Lighting::default()).unwrap();
        let prompts = build_view_prompts("sks", &subject.class_noun).unwrap();

        let p = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), seed.derive("p")).unwrap();
        let stage1 = identity_aware_optimize(&p, &views, &prompts, &encoder, &p_cfg, &sched, seed).unwrap();
        assert_only_changed(p.params(), stage1.model.params(), ParamGroup::ImageCrossAttention);
        assert_eq!(p.params().changed_groups(stage1.model.params()), vec![ParamGroup::ImageCrossAttention]);

        let m = PatchDenoiser::new(DenoiserConfig::multiview_toy(), seed.derive("m")).unwrap();
        let stage2 = subject_prior_optimize(&m, &encoder, &views, &views.colors[0], &m_cfg, &sched, seed).unwrap();
        assert_only_changed(m.params(), stage2.model.params(), ParamGroup::CrossDomainSelfAttention);
    }
    let secs = clock.elapsed().as_secs_f64();
    println!("20 seeds in {secs:.1}s");
    assert!(secs < 120.0);
}

#[test]
fn zero_iterations_is_a_no_op() {
    let sched = build_schedule(1000, ScheduleKind::VpLinear).unwrap();
    let encoder = ConvEmbedder::standard();
    let subject = &standard_corpus()[3];
    let views = subject.views(32, &Lighting::default()).unwrap();
    let prompts = build_view_prompts("sks", &subject.class_noun).unwrap();
    let p = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(1)).unwrap();
    let cfg = PersonalizerTrainConfig {
        iterations: 0,
        ..PersonalizerTrainConfig::toy()
    };
    let out = identity_aware_optimize(&p, &views, &prompts, &encoder, &cfg, &sched, Seed(2)).unwrap();
    assert!(out.losses.is_empty());
    assert_eq!(out.model.digest(), p.digest());

    let m = PatchDenoiser::new(DenoiserConfig::multiview_toy(), Seed(3)).unwrap();
    let cfg = MVTrainConfig {
        iterations: 0,
        ..MVTrainConfig::toy()
    };
    let out = subject_prior_optimize(&m, &encoder, &views, &views.colors[0], &cfg, &sched, Seed(4)).unwrap();
    assert!(out.losses.is_empty());
    assert_eq!(out.model.digest(), m.digest());
}

#[test]
fn mismatched_prompts_are_rejected() {
    let sched = build_schedule(1000, ScheduleKind::VpLinear).unwrap();
    let subject = &standard_corpus()[0];
    let views = subject.views(32, &Lighting::default()).unwrap();
    let mut prompts = build_view_prompts("sks", "ball").unwrap();
    prompts.swap(0, 1);
    let p = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(1)).unwrap();
    let r = identity_aware_optimize(&p, &views, &prompts, &ConvEmbedder::standard(), &PersonalizerTrainConfig::toy(), &sched, Seed(2));
    assert!(r.is_err());
}
