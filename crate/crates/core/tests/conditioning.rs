mod common;

use coevo_core::camera::{Direction, Lighting};
use coevo_core::corpus::{standard_corpus, TRAIN_SUBJECTS};
use coevo_core::diffusion::SamplerConfig;
use coevo_core::encoder::{cosine, ConvEmbedder, ImageEncoder, ImageFeatures};
use coevo_core::mvdiffusion::generate_multiviews;
use coevo_core::personalizer::personalize;
use coevo_core::Seed;

fn sampler() -> SamplerConfig {
    SamplerConfig {
        steps: 25,
        guidance: 1.0,
        clip_denoised: true,
    }
}

#[test]
fn personalize_is_deterministic_and_uses_features() {
    let sched = common::schedule();
    let enc = ConvEmbedder::standard();
    let subject = &standard_corpus()[2];
    let img = subject.render(&Direction::Front.camera(), 32, &Lighting::default()).color;
    let feats = enc.encode(&img).unwrap();
    let text = format!("a sks {}, front", subject.class_noun);
    let m = common::personalizer();
    let a = personalize(m, &feats, &text, &sched, &sampler(), Seed(3)).unwrap();
    assert_eq!(a, personalize(m, &feats, &text, &sched, &sampler(), Seed(3)).unwrap());
    assert_eq!(a.dim(), (3, 32, 32));
    let blank = personalize(m, &ImageFeatures::zeros(enc.dim(), enc.id()), &text, &sched, &sampler(), Seed(3)).unwrap();
    assert_ne!(a, blank);
}

#[test]
fn unguided_output_ignores_text() {
    let sched = common::schedule();
    let enc = ConvEmbedder::standard();
    let img = standard_corpus()[4].render(&Direction::Front.camera(), 32, &Lighting::default()).color;
    let feats = enc.encode(&img).unwrap();
    let cfg = SamplerConfig {
        guidance: 0.0,
        ..sampler()
    };
    let m = common::personalizer();
    let a = personalize(m, &feats, "a sks ball, front", &sched, &cfg, Seed(1)).unwrap();
    let b = personalize(m, &feats, "a sks cone, back", &sched, &cfg, Seed(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn multiview_output_is_tagged_and_follows_the_reference() {
    let sched = common::schedule();
    let enc = ConvEmbedder::standard();
    let probe = ConvEmbedder::new("probe", Seed(0xd157), 16, 64);
    let corpus = standard_corpus();
    let m = common::multiview();
    let fronts: Vec<_> = (0..8)
        .map(|k| corpus[TRAIN_SUBJECTS + k].render(&Direction::Front.camera(), 32, &Lighting::default()).color)
        .collect();
    let mut hits = 0;
    for (k, reference) in fronts.iter().enumerate() {
        let out = generate_multiviews(m, &enc, reference, &sched, &sampler(), Seed(k as u64)).unwrap();
        assert_eq!(out.directions, Direction::ALL.to_vec());
        let normals = out.normals.as_ref().unwrap();
        assert_eq!(normals.len(), 6);
        for n in normals {
            for i in 0..32 {
                for j in 0..32 {
                    let len = (0..3).map(|c| n[[c, i, j]].powi(2)).sum::<f64>().sqrt();
                    assert!((len - 1.0).abs() < 1e-9);
                }
            }
        }
        if k == 0 {
            let again = generate_multiviews(m, &enc, reference, &sched, &sampler(), Seed(0)).unwrap();
            assert_eq!(out, again);
        }
        let e = probe.encode(out.view(Direction::Front)).unwrap().embedding;
        let nearest = (0..fronts.len())
            .max_by(|&a, &b| {
                let sa = cosine(&e, &probe.encode(&fronts[a]).unwrap().embedding);
                let sb = cosine(&e, &probe.encode(&fronts[b]).unwrap().embedding);
                sa.total_cmp(&sb)
            })
            .unwrap();
        hits += (nearest == k) as usize;
    }
    println!("front view nearest to its reference for {hits}/8 subjects");
    assert!(hits >= 4);
}
