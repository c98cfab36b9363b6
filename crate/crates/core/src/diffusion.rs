//! Forward noising, the ε-prediction objective, classifier-free guidance and
//! deterministic reverse sampling.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::denoiser::PatchDenoiser;
use crate::encoder::ImageFeatures;
use crate::error::{Error, Result};
use crate::image::{ensure_finite, gaussian_noise, Image};
use crate::params::ParamSet;
use crate::schedule::NoiseSchedule;
use crate::seed::Seed;

/// Conditioning for one prediction. `ConditionBundle::null()` is the
/// unconditional input used by guidance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConditionBundle {
    pub text: Option<String>,
    pub image: Option<ImageFeatures>,
    /// Reference pixels for models that take an image input (multi-view).
    pub reference: Option<Image>,
}

impl ConditionBundle {
    pub fn null() -> Self {
        Self::default()
    }

    pub fn is_null(&self) -> bool {
        self.text.as_deref().is_none_or(str::is_empty) && self.image.is_none() && self.reference.is_none()
    }
}

/// Anything that predicts noise for a batch of joint samples.
pub trait NoisePredictor: Sync {
    /// `(units, C, H, W)` of one joint sample.
    fn sample_shape(&self) -> (usize, usize, usize, usize);

    fn predict(&self, x_t: &Array4<f64>, cond: &ConditionBundle, t: usize)
        -> Result<Array4<f64>>;
}

impl NoisePredictor for PatchDenoiser {
    fn sample_shape(&self) -> (usize, usize, usize, usize) {
        PatchDenoiser::sample_shape(self)
    }

    fn predict(
        &self,
        x_t: &Array4<f64>,
        cond: &ConditionBundle,
        t: usize,
    ) -> Result<Array4<f64>> {
        self.predict_batch(x_t, cond, t)
    }
}

fn same_shape(a: &Array4<f64>, b: &Array4<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `x_t = α_t·x₀ + σ_t·ε`.
pub fn forward_noise(
    x0: &Array4<f64>,
    eps: &Array4<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Array4<f64>> {
    same_shape(x0, eps)?;
    sched.check_t(t)?;
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    Ok(ndarray::Zip::from(x0)
        .and(eps)
        .map_collect(|&x, &e| a * x + s * e))
}

fn mse(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Mean over batch and pixels of `‖ε − ε_θ(x_t, c, t)‖²`.
pub fn diffusion_loss<M: NoisePredictor + ?Sized>(
    model: &M,
    x0: &Array4<f64>,
    cond: &ConditionBundle,
    t: usize,
    eps: &Array4<f64>,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let x_t = forward_noise(x0, eps, t, sched)?;
    let pred = model.predict(&x_t, cond, t)?;
    same_shape(eps, &pred)?;
    ensure_finite(pred.iter().copied(), "model output")?;
    Ok(mse(eps, &pred))
}

/// Loss and analytic gradient for one joint sample of a [`PatchDenoiser`].
pub fn diffusion_loss_and_grad(
    model: &PatchDenoiser,
    x0: &Array4<f64>,
    cond: &ConditionBundle,
    t: usize,
    eps: &Array4<f64>,
    sched: &NoiseSchedule,
) -> Result<(f64, ParamSet)> {
    let x_t = forward_noise(x0, eps, t, sched)?;
    model.eps_loss_and_grad(&x_t, cond, t, eps)
}

/// `w·ε(x_t, c, t) + (1 − w)·ε(x_t, ∅, t)`.
pub fn cfg_predict<M: NoisePredictor + ?Sized>(
    model: &M,
    x_t: &Array4<f64>,
    cond: &ConditionBundle,
    t: usize,
    w: f64,
) -> Result<Array4<f64>> {
    if w == 1.0 {
        return model.predict(x_t, cond, t);
    }
    let uncond = model.predict(x_t, &ConditionBundle::null(), t)?;
    if w == 0.0 {
        return Ok(uncond);
    }
    let c = model.predict(x_t, cond, t)?;
    Ok(ndarray::Zip::from(&c)
        .and(&uncond)
        .map_collect(|&a, &b| w * a + (1.0 - w) * b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: f64,
    /// Clamp the running `x̂₀` estimate to `[-1, 1]` at every step.
    pub clip_denoised: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance: 1.0,
            clip_denoised: true,
        }
    }
}

/// Deterministic (η = 0) reverse sampling of one joint sample from seeded
/// Gaussian noise. The result is clamped to `[-1, 1]`.
pub fn reverse_sample<M: NoisePredictor + ?Sized>(
    model: &M,
    cond: &ConditionBundle,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    seed: Seed,
) -> Result<Array4<f64>> {
    let ts = sched.inference_timesteps(sampler.steps)?;
    let mut x = gaussian_noise(model.sample_shape(), seed.derive("initial-noise"));
    for (step, pair) in ts.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let eps = cfg_predict(model, &x, cond, t, sampler.guidance)?;
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let (an, sn) = (sched.alpha(t_next), sched.sigma(t_next));
        ndarray::Zip::from(&mut x).and(&eps).for_each(|xv, &e| {
            let mut x0 = (*xv - s * e) / a;
            if sampler.clip_denoised {
                x0 = x0.clamp(-1.0, 1.0);
            }
            *xv = an * x0 + sn * e;
        });
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step, t });
        }
    }
    x.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, ScheduleKind};

    struct Const(f64);
    impl NoisePredictor for Const {
        fn sample_shape(&self) -> (usize, usize, usize, usize) {
            (1, 1, 2, 2)
        }
        fn predict(&self, x: &Array4<f64>, _: &ConditionBundle, _: usize) -> Result<Array4<f64>> {
            Ok(Array4::from_elem(x.dim(), self.0))
        }
    }

    #[test]
    fn forward_noise_edge_cases() {
        let s = build_schedule(10, ScheduleKind::VpLinear).unwrap();
        let x0 = gaussian_noise((2, 3, 4, 4), Seed(1));
        let e = gaussian_noise((2, 3, 4, 4), Seed(2));
        assert_eq!(forward_noise(&x0, &e, 0, &s).unwrap(), x0);
        let zero = Array4::zeros(x0.dim());
        let out = forward_noise(&zero, &e, 4, &s).unwrap();
        assert_eq!(out, e.mapv(|v| s.sigma(4) * v));
        assert!(forward_noise(&x0, &e, 11, &s).is_err());
        assert!(forward_noise(&x0, &Array4::zeros((1, 3, 4, 4)), 1, &s).is_err());
    }

    #[test]
    fn forward_noise_at_t_max_uses_table() {
        // α_10 + σ_10 from the independently evaluated T=10 table
        const EXPECTED: [(f64, f64); 11] = include!("../testdata/vp_linear_t10.in");
        let s = build_schedule(10, ScheduleKind::VpLinear).unwrap();
        let ones = Array4::from_elem((1, 3, 2, 2), 1.0);
        let out = forward_noise(&ones, &ones, 10, &s).unwrap();
        let want = EXPECTED[10].0 + EXPECTED[10].1;
        assert!(out.iter().all(|v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn non_finite_prediction_is_an_error() {
        let s = build_schedule(10, ScheduleKind::VpLinear).unwrap();
        let x = Array4::zeros((1, 1, 2, 2));
        let r = diffusion_loss(&Const(f64::NAN), &x, &ConditionBundle::null(), 3, &x, &s);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn sampler_rejects_too_many_steps_and_reports_divergence() {
        let s = build_schedule(10, ScheduleKind::VpLinear).unwrap();
        let cfg = SamplerConfig {
            steps: 11,
            ..Default::default()
        };
        assert!(reverse_sample(&Const(0.0), &ConditionBundle::null(), &s, &cfg, Seed(0)).is_err());
        let cfg = SamplerConfig {
            steps: 10,
            guidance: 1.0,
            clip_denoised: false,
        };
        let r = reverse_sample(&Const(f64::INFINITY), &ConditionBundle::null(), &s, &cfg, Seed(0));
        assert!(matches!(r, Err(Error::Diverged { step: 0, t: 10 })));
    }
}
