//! The diversify step and the two-factor cascade sampler.

use coevo_core::denoiser::PatchDenoiser;
use coevo_core::diffusion::SamplerConfig;
use coevo_core::encoder::{cosine, ImageEncoder};
use coevo_core::image::{resize, Image};
use coevo_core::mvdiffusion::generate_multiviews;
use coevo_core::personalizer::personalize;
use coevo_core::schedule::NoiseSchedule;
use coevo_core::views::MultiViewBatch;
use coevo_core::Seed;

use crate::config::CascadeMode;
use crate::{Error, Result};

/// Fails unless `model` has parameter digest `expected`.
pub fn expect_digest(role: &'static str, model: &PatchDenoiser, expected: &str) -> Result<()> {
    let actual = model.digest();
    if actual != expected {
        return Err(Error::Provenance {
            role,
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(())
}

/// One personalized image per view, each conditioned on that view's
/// features and `text`. `personalizer` must be the model before any
/// fine-tuning, identified by `original_digest`. View `v` samples with
/// `seed.index(v)`. Normals are dropped.
#[allow(clippy::too_many_arguments)]
pub fn diversify_views(
    personalizer: &PatchDenoiser,
    original_digest: &str,
    views: &MultiViewBatch,
    text: &str,
    encoder: &dyn ImageEncoder,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    seed: Seed,
) -> Result<MultiViewBatch> {
    expect_digest("original personalizer", personalizer, original_digest)?;
    views.validate()?;
    let colors = views
        .colors
        .iter()
        .enumerate()
        .map(|(v, img)| {
            let features = encoder.encode(img)?;
            Ok(personalize(personalizer, &features, text, sched, sampler, seed.index(v as u64))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = MultiViewBatch {
        colors,
        normals: None,
        ..views.clone()
    };
    out.validate()?;
    Ok(out)
}

/// Prompt for the first cascade view.
pub fn cascade_prompt(identifier: &str, class_noun: &str, text: &str) -> String {
    let base = format!("a {identifier} {class_noun}, front");
    if text.is_empty() {
        base
    } else {
        format!("{base}, {text}")
    }
}

/// Independent seed streams of the two cascade factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CascadeStreams {
    pub view1: Seed,
    pub rest: Seed,
}

impl CascadeStreams {
    pub fn split(seed: Seed) -> Self {
        Self {
            view1: seed.derive("cascade/view1"),
            rest: seed.derive("cascade/views_rest"),
        }
    }
}

/// The first view, from the personalized model conditioned on the subject
/// image and the prompt.
pub fn sample_view1(
    personalizer: &PatchDenoiser,
    encoder: &dyn ImageEncoder,
    image: &Image,
    prompt: &str,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    seed: Seed,
) -> Result<Image> {
    let features = encoder.encode(image)?;
    Ok(personalize(personalizer, &features, prompt, sched, sampler, seed)?)
}

/// Views 2..N from the multi-view model conditioned on `view1`, which is
/// kept as the front view.
pub fn sample_rest(
    multiview: &PatchDenoiser,
    encoder: &dyn ImageEncoder,
    view1: &Image,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    seed: Seed,
) -> Result<MultiViewBatch> {
    let mut batch = generate_multiviews(multiview, encoder, view1, sched, sampler, seed)?;
    batch.colors[0] = resize(view1, batch.image_size());
    Ok(batch)
}

/// Final views of the subject in `image`. In [`CascadeMode::Cascade`] view 1
/// comes from `personalizer` and the rest from `multiview`; in
/// [`CascadeMode::MultiviewOnly`] all six come from `multiview` conditioned
/// on `image`.
#[allow(clippy::too_many_arguments)]
pub fn cascade_sample(
    personalizer: &PatchDenoiser,
    multiview: &PatchDenoiser,
    encoder: &dyn ImageEncoder,
    image: &Image,
    prompt: &str,
    mode: CascadeMode,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    seed: Seed,
) -> Result<MultiViewBatch> {
    let streams = CascadeStreams::split(seed);
    match mode {
        CascadeMode::Cascade => {
            let v1 = sample_view1(personalizer, encoder, image, prompt, sched, sampler, streams.view1)?;
            sample_rest(multiview, encoder, &v1, sched, sampler, streams.rest)
        }
        CascadeMode::MultiviewOnly => Ok(generate_multiviews(multiview, encoder, image, sched, sampler, streams.rest)?),
    }
}

/// Mean `1 − cos` between encoder embeddings of corresponding views.
pub fn subject_distance(a: &MultiViewBatch, b: &MultiViewBatch, encoder: &dyn ImageEncoder) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in a.colors.iter().zip(&b.colors) {
        let size = y.dim().1;
        let ex = encoder.encode(&resize(x, size))?.embedding;
        let ey = encoder.encode(y)?.embedding;
        total += 1.0 - cosine(&ex, &ey);
    }
    Ok(total / a.colors.len() as f64)
}
