use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use coevo_core::corpus::{standard_corpus, TRAIN_SUBJECTS};
use coevo_core::image::Image;
use coevo_core::Seed;
use coevo_eval::retrieval::{corpus_samples, toy_clip_family};
use coevo_eval::{clip_r_precision, EncoderPair, Result};
use ndarray::Array3;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_vec(seed: Seed, n: usize) -> Vec<f64> {
    let mut rng = seed.rng();
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Image and prompt embeddings are independent hashes of their inputs.
struct RandomPair;

fn hash_seed<T: Hash + ?Sized>(v: &T) -> Seed {
    let mut h = DefaultHasher::new();
    v.hash(&mut h);
    Seed(h.finish())
}

impl EncoderPair for RandomPair {
    fn id(&self) -> &str {
        "random"
    }
    fn encode_image(&self, img: &Image) -> Result<Vec<f64>> {
        let bits: Vec<u64> = img.iter().map(|v| v.to_bits()).collect();
        Ok(gaussian_vec(hash_seed(&bits), 16))
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(gaussian_vec(hash_seed(text).derive("text"), 16))
    }
}

/// The image's first pixel names the prompt index it belongs to.
struct Oracle {
    prompts: Vec<String>,
}

impl EncoderPair for Oracle {
    fn id(&self) -> &str {
        "oracle"
    }
    fn encode_image(&self, img: &Image) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.prompts.len()];
        e[img[[0, 0, 0]] as usize] = 1.0;
        Ok(e)
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.prompts.len()];
        e[self.prompts.iter().position(|p| p == text).unwrap()] = 1.0;
        Ok(e)
    }
}

fn noise_images(n: usize, seed: u64) -> Vec<Image> {
    let mut rng = Seed(seed).rng();
    (0..n)
        .map(|_| Array3::from_shape_simple_fn((3, 4, 4), || rng.random_range(-1.0..1.0)))
        .collect()
}

fn prompts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("prompt number {i}")).collect()
}

/// Straight-line recount over every (render, prompt) pair.
fn brute_force(renders: &[Image], truth: &[usize], prompts: &[String], enc: &dyn EncoderPair) -> usize {
    let mut hits = 0;
    for (img, &t) in renders.iter().zip(truth) {
        let e = enc.encode_image(img).unwrap();
        let ne = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut sims = Vec::new();
        for p in prompts {
            let q = enc.encode_text(p).unwrap();
            let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d: f64 = e.iter().zip(&q).map(|(a, b)| a * b).sum();
            sims.push(if ne == 0.0 || nq == 0.0 { 0.0 } else { d / (ne * nq) });
        }
        let beaten = (0..prompts.len()).any(|j| j != t && sims[j] >= sims[t]);
        if !beaten {
            hits += 1;
        }
    }
    hits
}

fn split(prompts: &[String], t: usize) -> (String, Vec<String>) {
    let others = prompts.iter().enumerate().filter(|(j, _)| *j != t).map(|(_, p)| p.clone()).collect();
    (prompts[t].clone(), others)
}

#[test]
fn perfect_encoder_scores_one() {
    let p = prompts(5);
    let enc = Oracle { prompts: p.clone() };
    let renders: Vec<Image> = (0..7).map(|_| Array3::from_elem((3, 2, 2), 3.0)).collect();
    let (truth, others) = split(&p, 3);
    let r = clip_r_precision(&renders, &truth, &others, &enc).unwrap();
    assert_eq!((r.score, r.successes, r.render_count), (1.0, 7, 7));
    assert_eq!(r.encoder, "oracle");
}

#[test]
fn exact_ties_count_as_failures() {
    let p = vec!["a".to_string(), "b".to_string()];
    let enc = Oracle { prompts: p.clone() };
    let renders = vec![Array3::from_elem((3, 2, 2), 0.0)];
    let r = clip_r_precision(&renders, "a", &["a".to_string()], &enc).unwrap();
    assert_eq!(r.score, 0.0);
    assert!(clip_r_precision(&renders, "a", &[], &enc).is_err());
    assert!(clip_r_precision(&[], "a", &["b".to_string()], &enc).is_err());
}

#[test]
fn random_gallery_matches_brute_force_and_chance() {
    let p = prompts(32);
    let renders = noise_images(1000, 9);
    let truth: Vec<usize> = (0..renders.len()).map(|i| i % 32).collect();
    let mut hits = 0;
    for t in 0..32 {
        let group: Vec<Image> = renders.iter().zip(&truth).filter(|(_, &k)| k == t).map(|(r, _)| r.clone()).collect();
        let (tp, others) = split(&p, t);
        hits += clip_r_precision(&group, &tp, &others, &RandomPair).unwrap().successes;
    }
    assert_eq!(hits, brute_force(&renders, &truth, &p, &RandomPair));
    let score = hits as f64 / renders.len() as f64;
    let chance = 1.0 / 32.0;
    let se = (chance * (1.0 - chance) / renders.len() as f64).sqrt();
    println!("random-encoder score {score:.4}, chance {chance:.4}, se {se:.4}");
    assert!((score - chance).abs() < 3.0 * se);
}

#[test]
fn toy_clip_gallery_matches_brute_force_and_beats_chance() {
    let corpus = standard_corpus();
    let train = corpus_samples(&corpus[..TRAIN_SUBJECTS], 12, 40.0, 32);
    let family = toy_clip_family(&train).unwrap();
    assert_eq!(family.len(), 3);
    let held_out = &corpus[TRAIN_SUBJECTS..];
    let p: Vec<String> = held_out.iter().map(|s| s.prompt().to_string()).collect();
    let gallery = corpus_samples(held_out, 16, 40.0, 32);
    let renders: Vec<Image> = gallery.iter().map(|(img, _)| img.clone()).collect();
    let truth: Vec<usize> = gallery.iter().map(|(_, c)| p.iter().position(|q| q == c).unwrap()).collect();
    for enc in &family {
        let mut hits = 0;
        for t in 0..p.len() {
            let group: Vec<Image> = renders.iter().zip(&truth).filter(|(_, &k)| k == t).map(|(r, _)| r.clone()).collect();
            let (tp, others) = split(&p, t);
            hits += clip_r_precision(&group, &tp, &others, enc).unwrap().successes;
        }
        assert_eq!(hits, brute_force(&renders, &truth, &p, enc));
        let score = hits as f64 / renders.len() as f64;
        println!("{}: held-out score {score:.3} (chance {:.3})", enc.id(), 1.0 / p.len() as f64);
        assert!(score > 2.0 / p.len() as f64);
    }
}

#[test]
fn standard_error_is_binomial() {
    let p = prompts(4);
    let renders = noise_images(50, 3);
    let (tp, others) = split(&p, 0);
    let r = clip_r_precision(&renders, &tp, &others, &RandomPair).unwrap();
    assert_eq!(r.score, r.successes as f64 / 50.0);
    assert!((r.standard_error() - (r.score * (1.0 - r.score) / 50.0).sqrt()).abs() < 1e-15);
    let r = r.with_elevation(40.0).with_gallery("noise");
    assert_eq!((r.elevation_deg, r.gallery.as_str()), (Some(40.0), "noise"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn score_ignores_render_and_distractor_order(seed in 0u64..1000, n in 1usize..40, k in 1usize..10) {
        let p = prompts(k + 1);
        let mut renders = noise_images(n, seed);
        let (tp, mut others) = split(&p, 0);
        let a = clip_r_precision(&renders, &tp, &others, &RandomPair).unwrap();
        let mut rng = Seed(seed).derive("shuffle").rng();
        use rand::seq::SliceRandom;
        renders.shuffle(&mut rng);
        others.shuffle(&mut rng);
        let b = clip_r_precision(&renders, &tp, &others, &RandomPair).unwrap();
        prop_assert_eq!(a.successes, b.successes);
        prop_assert_eq!(a.score, b.score);
    }
}
