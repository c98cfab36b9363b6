//! The personalised 2D model: view-dependent prompts, augmentation and
//! identity-aware adapter optimisation.

use std::fmt;

use ndarray::{Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Direction;
use crate::denoiser::PatchDenoiser;
use crate::diffusion::{diffusion_loss_and_grad, reverse_sample, ConditionBundle, SamplerConfig};
use crate::encoder::{ImageEncoder, ImageFeatures};
use crate::error::{Error, Result};
use crate::image::{gaussian_noise, resize, Image};
use crate::optim::{AdamConfig, AdamW};
use crate::params::{ParamGroup, ParamSet};
use crate::schedule::NoiseSchedule;
use crate::seed::Seed;
use crate::views::MultiViewBatch;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewPrompt {
    pub identifier: String,
    pub class_noun: String,
    pub direction: Direction,
    pub rendered_text: String,
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.trim().is_empty() {
        return Err(Error::InvalidArgument(format!("{kind} must be non-empty")));
    }
    if s.contains(',') {
        return Err(Error::InvalidArgument(format!("{kind} must not contain ','")));
    }
    Ok(())
}

impl ViewPrompt {
    pub fn new(identifier: &str, class_noun: &str, direction: Direction) -> Result<Self> {
        check_token("identifier", identifier)?;
        check_token("class noun", class_noun)?;
        if identifier.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(
                "identifier must be a single token".into(),
            ));
        }
        Ok(Self {
            identifier: identifier.to_string(),
            class_noun: class_noun.to_string(),
            direction,
            rendered_text: format!("a {identifier} {class_noun}, {direction}"),
        })
    }

    /// Inverse of the `a <identifier> <class noun>, <direction>` template.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("not a view prompt: {text:?}"));
        let (head, dir) = text.rsplit_once(", ").ok_or_else(bad)?;
        let rest = head.strip_prefix("a ").ok_or_else(bad)?;
        let (identifier, class_noun) = rest.split_once(' ').ok_or_else(bad)?;
        let direction = dir.parse().map_err(|_| bad())?;
        let p = Self::new(identifier, class_noun, direction)?;
        if p.rendered_text != text {
            return Err(bad());
        }
        Ok(p)
    }
}

impl fmt::Display for ViewPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rendered_text)
    }
}

/// One prompt per canonical direction, front first.
pub fn build_view_prompts(identifier: &str, class_noun: &str) -> Result<Vec<ViewPrompt>> {
    Direction::ALL
        .iter()
        .map(|&d| ViewPrompt::new(identifier, class_noun, d))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Brightness factor drawn from `1 ± brightness`.
    pub brightness: f64,
    /// Contrast factor drawn from `1 ± contrast`.
    pub contrast: f64,
    /// Crop keeps a square of at least this fraction of the image area.
    pub min_crop_area: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: 0.1,
            contrast: 0.1,
            min_crop_area: 0.9,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            min_crop_area: 1.0,
        }
    }

    fn is_identity(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 0.0 && self.min_crop_area >= 1.0
    }
}

/// Seeded colour jitter and square crop-resize. Never flips.
pub fn augment(img: &Image, cfg: &AugmentConfig, seed: Seed) -> Image {
    if cfg.is_identity() {
        return img.clone();
    }
    let mut rng = seed.rng();
    let (c, h, w) = img.dim();
    let area: f64 = rng.random_range(cfg.min_crop_area.min(1.0)..=1.0);
    let side = ((area.sqrt() * h.min(w) as f64).round() as usize).clamp(1, h.min(w));
    let oy = rng.random_range(0..=h - side);
    let ox = rng.random_range(0..=w - side);
    let b: f64 = 1.0 + rng.random_range(-cfg.brightness..=cfg.brightness);
    let k: f64 = 1.0 + rng.random_range(-cfg.contrast..=cfg.contrast);

    let crop = img
        .slice(ndarray::s![.., oy..oy + side, ox..ox + side])
        .to_owned();
    let mut out: Array3<f64> = if side == h && side == w {
        crop
    } else {
        let r = resize(&crop, h);
        if h == w {
            r
        } else {
            resize(&r, w)
        }
    };
    let mean = out.mean().unwrap_or(0.0);
    out.mapv_inplace(|v| (((v - mean) * k + mean) * b).clamp(-1.0, 1.0));
    debug_assert_eq!(out.dim(), (c, h, w));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalizerTrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub image_size: usize,
    pub augment: AugmentConfig,
}

impl Default for PersonalizerTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            iterations: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            image_size: 256,
            augment: AugmentConfig::default(),
        }
    }
}

impl PersonalizerTrainConfig {
    pub fn toy() -> Self {
        Self {
            image_size: 32,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && self.image_size > 0
            && (0.0..=1.0).contains(&self.augment.min_crop_area)
            && self.augment.min_crop_area > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid personalizer config: {self:?}"
            )))
        }
    }
}

/// Output of an optimisation stage.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: PatchDenoiser,
    /// Mean loss of each iteration.
    pub losses: Vec<f64>,
}

/// Fine-tunes only the image cross-attention group on the six views, each
/// labelled with its view prompt and conditioned on features of an augmented
/// copy of itself. Every iteration takes one Adam step on the loss averaged
/// over the six views, each with its own timestep and noise.
pub fn identity_aware_optimize(
    model: &PatchDenoiser,
    views: &MultiViewBatch,
    prompts: &[ViewPrompt],
    encoder: &dyn ImageEncoder,
    cfg: &PersonalizerTrainConfig,
    sched: &NoiseSchedule,
    seed: Seed,
) -> Result<Trained> {
    cfg.validate()?;
    views.validate()?;
    if prompts.len() != views.directions.len()
        || prompts
            .iter()
            .zip(&views.directions)
            .any(|(p, d)| p.direction != *d)
    {
        return Err(Error::MissingDirection(
            "prompts do not match the view directions".into(),
        ));
    }
    check_schedule(model, sched)?;
    let mut model = model.clone();
    let mut losses = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(Trained { model, losses });
    }
    let size = model.config().image_size;
    let targets: Vec<_> = views
        .colors
        .iter()
        .map(|v| resize(v, size).insert_axis(Axis(0)))
        .collect();
    let mut opt = AdamW::new(cfg.adam(), model.params(), &[ParamGroup::ImageCrossAttention]);
    let max_t = sched.num_steps();
    let stream = seed.derive("identity-aware");
    for it in 0..cfg.iterations {
        let iter_seed = stream.index(it as u64);
        let mut rng = iter_seed.derive("timesteps").rng();
        let mut grads = ParamSet::zeros_like(model.params());
        let mut total = 0.0;
        for (v, (x0, prompt)) in targets.iter().zip(prompts).enumerate() {
            let vs = iter_seed.index(v as u64);
            let t = rng.random_range(1..=max_t);
            let aug = augment(&views.colors[v], &cfg.augment, vs.derive("augment"));
            let cond = ConditionBundle {
                text: Some(prompt.rendered_text.clone()),
                image: Some(encoder.encode(&aug)?),
                reference: None,
            };
            let eps = gaussian_noise(x0.dim(), vs.derive("noise"));
            let (loss, g) = diffusion_loss_and_grad(&model, x0, &cond, t, &eps, sched)?;
            total += loss;
            grads.add_scaled(&g, 1.0 / targets.len() as f64);
        }
        let mean = total / targets.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        losses.push(mean);
        opt.step(model.params_mut(), &grads);
    }
    Ok(Trained { model, losses })
}

pub(crate) fn check_schedule(model: &PatchDenoiser, sched: &NoiseSchedule) -> Result<()> {
    let (want, got) = (model.schedule().spec(), sched.spec());
    if want != got {
        return Err(Error::InvalidArgument(format!(
            "model was built for {} with T = {}, schedule is {} with T = {}",
            want.kind, want.num_steps, got.kind, got.num_steps
        )));
    }
    Ok(())
}

/// One personalised image conditioned on subject features and text.
pub fn personalize(
    model: &PatchDenoiser,
    features: &ImageFeatures,
    text: &str,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    seed: Seed,
) -> Result<Image> {
    let cond = ConditionBundle {
        text: (!text.is_empty()).then(|| text.to_string()),
        image: Some(features.clone()),
        reference: None,
    };
    let x = reverse_sample(model, &cond, sched, sampler, seed)?;
    Ok(x.index_axis(Axis(0), 0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_prompt_matches_template() {
        let p = build_view_prompts("xxy5syt00", "dog").unwrap();
        assert_eq!(p[0].rendered_text, "a xxy5syt00 dog, front");
        assert_eq!(p.len(), 6);
        let dirs: Vec<_> = p.iter().map(|x| x.direction).collect();
        assert_eq!(dirs, Direction::ALL);
        for (i, a) in p.iter().enumerate() {
            for b in &p[..i] {
                assert_ne!(a.rendered_text, b.rendered_text);
            }
            assert_eq!(&ViewPrompt::parse(&a.rendered_text).unwrap(), a);
        }
    }

    #[test]
    fn empty_tokens_rejected() {
        assert!(build_view_prompts("", "dog").is_err());
        assert!(build_view_prompts("sks", " ").is_err());
        assert!(ViewPrompt::parse("a sks dog, upside-down").is_err());
        assert!(ViewPrompt::parse("sks dog, front").is_err());
    }

    #[test]
    fn augment_identity_and_range() {
        let img = Array3::from_shape_fn((3, 8, 8), |(c, i, j)| ((c + i * j) as f64 / 40.0).sin());
        assert_eq!(augment(&img, &AugmentConfig::identity(), Seed(1)), img);
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, Seed(9));
        assert_eq!(a, augment(&img, &cfg, Seed(9)));
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a.dim(), img.dim());
    }
}
