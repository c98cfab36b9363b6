//! Base-model training on the procedural corpus.
//!
//! The personalised model learns `ε(x_t | "a <class>, <direction>", F(aug(x)))`
//! over every view of the training subjects; the multi-view model learns the
//! joint color + normal sample of a subject given its front view. Each
//! condition is dropped independently with probability `condition_dropout`
//! so the null condition is meaningful for guidance.
//!
//! With [`LossWeighting::Preconditioned`] each sample's ε error is divided
//! by `b_t²`, which turns it into a plain MSE on the model's clean-image
//! estimate and keeps high-noise timesteps from being ignored.

use std::path::Path;
use std::sync::Mutex;

use ndarray::{Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::Lighting;
use crate::checkpoint::Checkpoint;
use crate::corpus::{standard_corpus, Subject, CORPUS_SEED, TRAIN_SUBJECTS};
use crate::denoiser::{DenoiserConfig, PatchDenoiser};
use crate::diffusion::{diffusion_loss_and_grad, ConditionBundle};
use crate::encoder::{ImageEncoder, ImageFeatures};
use crate::error::{Error, Result};
use crate::image::gaussian_noise;
use crate::mvdiffusion::{joint_noise, joint_sample, reference_condition};
use crate::optim::{AdamConfig, AdamW};
use crate::params::{ParamGroup, ParamSet};
use crate::personalizer::{augment, check_schedule, AugmentConfig, Trained};
use crate::schedule::NoiseSchedule;
use crate::seed::Seed;
use crate::views::MultiViewBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    Epsilon,
    Preconditioned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one (linear decay).
    pub final_lr_fraction: f64,
    pub condition_dropout: f64,
    /// Augmented feature vectors cached per training view.
    pub augmentations: usize,
    pub weighting: LossWeighting,
}

impl PretrainConfig {
    pub fn personalizer() -> Self {
        Self {
            steps: 4000,
            batch: 4,
            learning_rate: 2e-3,
            final_lr_fraction: 0.1,
            condition_dropout: 0.1,
            augmentations: 4,
            weighting: LossWeighting::Preconditioned,
        }
    }

    pub fn multiview() -> Self {
        Self {
            steps: 3000,
            batch: 1,
            learning_rate: 2e-3,
            final_lr_fraction: 0.1,
            condition_dropout: 0.1,
            augmentations: 1,
            weighting: LossWeighting::Preconditioned,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0
            || self.augmentations == 0
            || self.learning_rate <= 0.0
            || !(0.0..=1.0).contains(&self.condition_dropout)
            || !(0.0..=1.0).contains(&self.final_lr_fraction)
        {
            return Err(Error::InvalidArgument(format!("invalid pretrain config: {self:?}")));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    fn weight(&self, model: &PatchDenoiser, t: usize) -> f64 {
        match self.weighting {
            LossWeighting::Epsilon => 1.0,
            LossWeighting::Preconditioned => {
                let (_, b) = model.output_coefficients(t);
                1.0 / (b * b)
            }
        }
    }

    fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.steps.max(1) as f64;
        self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * frac)
    }
}

/// Caption used for corpus views during pretraining.
pub fn class_prompt(class_noun: &str, direction: crate::camera::Direction) -> String {
    format!("a {class_noun}, {direction}")
}

fn subject_views(subjects: &[Subject], size: usize) -> Result<Vec<MultiViewBatch>> {
    let light = Lighting::default();
    subjects.iter().map(|s| s.views(size, &light)).collect()
}

pub fn pretrain_personalizer(
    config: DenoiserConfig,
    subjects: &[Subject],
    encoder: &dyn ImageEncoder,
    sched: &NoiseSchedule,
    cfg: &PretrainConfig,
    seed: Seed,
) -> Result<Trained> {
    cfg.validate()?;
    let mut model = PatchDenoiser::new(config, seed.derive("init"))?;
    check_schedule(&model, sched)?;
    let size = model.config().image_size;
    let views = subject_views(subjects, size)?;
    let aug = AugmentConfig::default();
    let mut features: Vec<Vec<Vec<ImageFeatures>>> = Vec::with_capacity(views.len());
    for (si, batch) in views.iter().enumerate() {
        let mut per_view = Vec::with_capacity(6);
        for (vi, img) in batch.colors.iter().enumerate() {
            let base = seed.derive("augment").index(si as u64).index(vi as u64);
            per_view.push(
                (0..cfg.augmentations)
                    .map(|k| encoder.encode(&augment(img, &aug, base.index(k as u64))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        features.push(per_view);
    }

    let mut opt = AdamW::new(cfg.adam(), model.params(), &ParamGroup::ALL);
    let mut rng = seed.derive("steps").rng();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads = ParamSet::zeros_like(model.params());
        let mut total = 0.0;
        for _ in 0..cfg.batch {
            let si = rng.random_range(0..views.len());
            let vi = rng.random_range(0..6);
            let k = rng.random_range(0..cfg.augmentations);
            let t = rng.random_range(1..=sched.num_steps());
            let keep_text = rng.random::<f64>() >= cfg.condition_dropout;
            let keep_image = rng.random::<f64>() >= cfg.condition_dropout;
            let batch = &views[si];
            let cond = ConditionBundle {
                text: keep_text.then(|| class_prompt(&subjects[si].class_noun, batch.directions[vi])),
                image: keep_image.then(|| features[si][vi][k].clone()),
                reference: None,
            };
            let x0 = batch.colors[vi].clone().insert_axis(Axis(0));
            let eps = gaussian_noise(x0.dim(), Seed(rng.random()));
            let (loss, g) = diffusion_loss_and_grad(&model, &x0, &cond, t, &eps, sched)?;
            let w = cfg.weight(&model, t);
            total += w * loss;
            grads.add_scaled(&g, w / cfg.batch as f64);
        }
        let mean = total / cfg.batch as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: step });
        }
        losses.push(mean);
        opt.set_learning_rate(cfg.lr_at(step));
        opt.step(model.params_mut(), &grads);
    }
    Ok(Trained { model, losses })
}

pub fn pretrain_multiview(
    config: DenoiserConfig,
    subjects: &[Subject],
    encoder: &dyn ImageEncoder,
    sched: &NoiseSchedule,
    cfg: &PretrainConfig,
    seed: Seed,
) -> Result<Trained> {
    cfg.validate()?;
    let mut model = PatchDenoiser::new(config, seed.derive("init"))?;
    check_schedule(&model, sched)?;
    let c = model.config().clone();
    let views = subject_views(subjects, c.image_size)?;
    let joints: Vec<Array4<f64>> = views
        .iter()
        .map(|v| joint_sample(v, c.image_size))
        .collect::<Result<_>>()?;
    let conds: Vec<ConditionBundle> = views
        .iter()
        .map(|v| reference_condition(&model, encoder, &v.colors[0]))
        .collect::<Result<_>>()?;

    let mut opt = AdamW::new(cfg.adam(), model.params(), &ParamGroup::ALL);
    let mut rng = seed.derive("steps").rng();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads = ParamSet::zeros_like(model.params());
        let mut total = 0.0;
        for _ in 0..cfg.batch {
            let si = rng.random_range(0..views.len());
            let t = rng.random_range(1..=sched.num_steps());
            let keep = rng.random::<f64>() >= cfg.condition_dropout;
            let cond = if keep {
                conds[si].clone()
            } else {
                ConditionBundle::null()
            };
            let eps = joint_noise(c.views, c.channels, c.image_size, Seed(rng.random()));
            let (loss, g) = diffusion_loss_and_grad(&model, &joints[si], &cond, t, &eps, sched)?;
            let w = cfg.weight(&model, t);
            total += w * loss;
            grads.add_scaled(&g, w / cfg.batch as f64);
        }
        let mean = total / cfg.batch as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: step });
        }
        losses.push(mean);
        opt.set_learning_rate(cfg.lr_at(step));
        opt.step(model.params_mut(), &grads);
    }
    Ok(Trained { model, losses })
}
/// Which base model to pretrain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseRole {
    Personalizer,
    Multiview,
}

impl BaseRole {
    pub fn name(self) -> &'static str {
        match self {
            BaseRole::Personalizer => "personalizer",
            BaseRole::Multiview => "multiview",
        }
    }
}

#[derive(Serialize)]
struct CacheKey<'a> {
    role: BaseRole,
    model: &'a DenoiserConfig,
    pretrain: &'a PretrainConfig,
    seed: u64,
    corpus_seed: u64,
    train_subjects: usize,
    encoder: &'a str,
}

/// Base model pretrained on the training split of the standard corpus,
/// stored in `cache_dir` as a full checkpoint named by a hash of everything
/// that determines its parameters. A cached file is reused when present.
pub fn pretrained_cached(
    role: BaseRole,
    config: &DenoiserConfig,
    cfg: &PretrainConfig,
    seed: Seed,
    encoder: &dyn ImageEncoder,
    sched: &NoiseSchedule,
    cache_dir: &Path,
) -> Result<PatchDenoiser> {
    let key = CacheKey {
        role,
        model: config,
        pretrain: cfg,
        seed: seed.0,
        corpus_seed: CORPUS_SEED.0,
        train_subjects: TRAIN_SUBJECTS,
        encoder: encoder.id(),
    };
    let digest = hex::encode(Sha256::digest(serde_json::to_vec(&key)?));
    let path = cache_dir.join(format!("{}-{}.json", role.name(), &digest[..16]));
    // Serializes cache fills within the process.
    static FILL: Mutex<()> = Mutex::new(());
    let _guard = FILL.lock().unwrap_or_else(|e| e.into_inner());
    if path.exists() {
        let (model, _) = Checkpoint::load(&path)?.into_model()?;
        if model.config() != config {
            return Err(Error::Checkpoint(format!("{} holds a different model", path.display())));
        }
        return Ok(model);
    }
    let train = &standard_corpus()[..TRAIN_SUBJECTS];
    let trained = match role {
        BaseRole::Personalizer => pretrain_personalizer(config.clone(), train, encoder, sched, cfg, seed)?,
        BaseRole::Multiview => pretrain_multiview(config.clone(), train, encoder, sched, cfg, seed)?,
    };
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    Checkpoint::full(&trained.model, sched).save(&tmp)?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(trained.model)
}

