//! The multi-view model: joint color + normal generation from a reference
//! image, and subject-prior optimisation of its cross-domain attention.

use ndarray::{concatenate, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::BACK_FACING;
use crate::denoiser::PatchDenoiser;
use crate::encoder::ImageEncoder;
use crate::diffusion::{
    diffusion_loss, forward_noise, reverse_sample, ConditionBundle, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::image::{gaussian_noise, normalize_vectors, resize, stack, Image};
use crate::normals::NormalEstimator;
use crate::optim::{AdamConfig, AdamW};
use crate::params::{ParamGroup, ParamSet, Snapshot};
use crate::personalizer::{check_schedule, Trained};
use crate::schedule::NoiseSchedule;
use crate::seed::Seed;
use crate::views::MultiViewBatch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MVTrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub image_size: usize,
}

impl Default for MVTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            weight_decay: 1e-2,
            iterations: 100,
            lambda: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            image_size: 256,
        }
    }
}

impl MVTrainConfig {
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
            && self.lambda >= 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && self.image_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid multi-view config: {self:?}")))
        }
    }
}

/// Condition for the multi-view model: the reference pixels and their
/// encoder features.
pub fn reference_condition(
    model: &PatchDenoiser,
    encoder: &dyn ImageEncoder,
    reference: &Image,
) -> Result<ConditionBundle> {
    Ok(ConditionBundle {
        text: None,
        image: Some(encoder.encode(reference)?),
        reference: Some(resize(reference, model.config().image_size)),
    })
}

/// Splits one joint sample into a direction-tagged batch. Normal units are
/// renormalised to unit vectors.
pub fn batch_from_joint(model: &PatchDenoiser, joint: &Array4<f64>, subject_id: &str) -> Result<MultiViewBatch> {
    let views = model.config().views;
    if views != 6 {
        return Err(Error::InvalidArgument(format!(
            "multi-view model must have 6 views, has {views}"
        )));
    }
    let unit = |u: usize| joint.index_axis(Axis(0), u).to_owned();
    let colors = (0..views).map(unit).collect();
    let normals = (model.config().domains > 1).then(|| {
        (views..2 * views)
            .map(|u| {
                let mut n = unit(u);
                normalize_vectors(&mut n, BACK_FACING);
                n
            })
            .collect()
    });
    MultiViewBatch::new(subject_id, colors, normals)
}

/// Six views (and normals, when the model has a normal domain) of the
/// subject in `reference`.
pub fn generate_multiviews(
    model: &PatchDenoiser,
    encoder: &dyn ImageEncoder,
    reference: &Image,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    seed: Seed,
) -> Result<MultiViewBatch> {
    check_schedule(model, sched)?;
    let cond = reference_condition(model, encoder, reference)?;
    let joint = reverse_sample(model, &cond, sched, sampler, seed)?;
    batch_from_joint(model, &joint, "generated")
}

pub fn estimate_normals(estimator: &dyn NormalEstimator, img: &Image) -> Image {
    estimator.estimate(img)
}

/// Replaces the normal maps of `batch` with estimates from its colors.
pub fn with_estimated_normals(batch: &MultiViewBatch, estimator: &dyn NormalEstimator) -> Result<MultiViewBatch> {
    let normals = batch.colors.iter().map(|c| estimator.estimate(c)).collect();
    let mut out = MultiViewBatch::new(batch.subject_id.clone(), batch.colors.clone(), Some(normals))?;
    out.cameras = batch.cameras.clone();
    Ok(out)
}

/// Joint `(12, 3, S, S)` array: six colors then six normals.
pub fn joint_sample(batch: &MultiViewBatch, size: usize) -> Result<Array4<f64>> {
    let normals = batch
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("batch has no normal maps".into()))?;
    let items: Vec<Image> = batch
        .colors
        .iter()
        .chain(normals)
        .map(|v| resize(v, size))
        .collect();
    stack(&items)
}

/// Independent noise for the color and normal halves of a joint sample.
pub fn joint_noise(views: usize, channels: usize, size: usize, seed: Seed) -> Array4<f64> {
    let shape = (views, channels, size, size);
    let c = gaussian_noise(shape, seed.derive("color"));
    let n = gaussian_noise(shape, seed.derive("normal"));
    concatenate(Axis(0), &[c.view(), n.view()]).expect("equal shapes")
}

fn check_snapshot(model: &PatchDenoiser, theta0: &Snapshot) -> Result<()> {
    if !theta0.0.same_layout(model.params()) {
        return Err(Error::GroupMismatch("θ0 snapshot does not match the model".into()));
    }
    Ok(())
}

/// `λ·‖θ − θ0‖₁ / N_θ` over every parameter.
pub fn drift_regularizer(params: &ParamSet, theta0: &ParamSet, lambda: f64) -> f64 {
    lambda * params.l1_distance(theta0) / params.total_len() as f64
}

/// Subgradient `λ·sign(θ − θ0)/N_θ`, zero where `θ = θ0`.
pub fn drift_regularizer_grad(params: &ParamSet, theta0: &ParamSet, lambda: f64) -> ParamSet {
    let n = params.total_len() as f64;
    let mut g = ParamSet::zeros_like(params);
    for grp in ParamGroup::ALL {
        let (p, q) = (params.group(grp), theta0.group(grp));
        for (gi, (a, b)) in g.group_mut(grp).iter_mut().zip(p.iter().zip(q)) {
            let d = a - b;
            *gi = if d > 0.0 {
                lambda / n
            } else if d < 0.0 {
                -lambda / n
            } else {
                0.0
            };
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubjectPriorLoss {
    pub diffusion: f64,
    pub regularizer: f64,
    pub total: f64,
}

/// Diffusion error over both domains of the joint sample plus the drift
/// regularizer.
pub fn subject_prior_loss(
    model: &PatchDenoiser,
    theta0: &Snapshot,
    x0: &Array4<f64>,
    cond: &ConditionBundle,
    t: usize,
    eps: &Array4<f64>,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<SubjectPriorLoss> {
    check_snapshot(model, theta0)?;
    let diffusion = diffusion_loss(model, x0, cond, t, eps, sched)?;
    let regularizer = drift_regularizer(model.params(), &theta0.0, lambda);
    Ok(SubjectPriorLoss {
        diffusion,
        regularizer,
        total: diffusion + regularizer,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn subject_prior_loss_and_grad(
    model: &PatchDenoiser,
    theta0: &Snapshot,
    x0: &Array4<f64>,
    cond: &ConditionBundle,
    t: usize,
    eps: &Array4<f64>,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<(SubjectPriorLoss, ParamSet)> {
    check_snapshot(model, theta0)?;
    let x_t = forward_noise(x0, eps, t, sched)?;
    let (diffusion, mut grads) = model.eps_loss_and_grad(&x_t, cond, t, eps)?;
    let regularizer = drift_regularizer(model.params(), &theta0.0, lambda);
    grads.add_scaled(&drift_regularizer_grad(model.params(), &theta0.0, lambda), 1.0);
    Ok((
        SubjectPriorLoss {
            diffusion,
            regularizer,
            total: diffusion + regularizer,
        },
        grads,
    ))
}

/// Fine-tunes only the cross-domain self-attention group on the joint
/// (colors + normals) sample of `views`, conditioned on `reference`. θ0 is
/// the model at entry; each iteration draws one timestep and independent
/// color and normal noise.
pub fn subject_prior_optimize(
    model: &PatchDenoiser,
    encoder: &dyn ImageEncoder,
    views: &MultiViewBatch,
    reference: &Image,
    cfg: &MVTrainConfig,
    sched: &NoiseSchedule,
    seed: Seed,
) -> Result<Trained> {
    cfg.validate()?;
    views.validate()?;
    check_schedule(model, sched)?;
    let mut model = model.clone();
    let mut losses = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(Trained { model, losses });
    }
    let c = model.config().clone();
    if c.domains != 2 {
        return Err(Error::InvalidArgument(
            "subject-prior optimisation needs a color + normal model".into(),
        ));
    }
    let x0 = joint_sample(views, c.image_size)?;
    let cond = reference_condition(&model, encoder, reference)?;
    let theta0 = model.snapshot();
    let mut opt = AdamW::new(cfg.adam(), model.params(), &[ParamGroup::CrossDomainSelfAttention]);
    let stream = seed.derive("subject-prior");
    for it in 0..cfg.iterations {
        let s = stream.index(it as u64);
        let t = s.derive("timestep").rng().random_range(1..=sched.num_steps());
        let eps = joint_noise(c.views, c.channels, c.image_size, s.derive("noise"));
        let (loss, grads) =
            subject_prior_loss_and_grad(&model, &theta0, &x0, &cond, t, &eps, cfg.lambda, sched)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        losses.push(loss.total);
        opt.step(model.params_mut(), &grads);
    }
    Ok(Trained { model, losses })
}
