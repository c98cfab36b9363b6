use coevo_core::denoiser::{DenoiserConfig, PatchDenoiser};
use coevo_core::diffusion::{
    cfg_predict, diffusion_loss, forward_noise, reverse_sample, ConditionBundle, NoisePredictor, SamplerConfig,
};
use coevo_core::encoder::ImageFeatures;
use coevo_core::image::gaussian_noise;
use coevo_core::schedule::{build_schedule, NoiseSchedule, ScheduleKind};
use coevo_core::Seed;
use coevo_core::Result;
use ndarray::{concatenate, Array4, Axis};
use proptest::prelude::*;

/// Returns a fixed array regardless of input.
struct Fixed(Array4<f64>);

impl NoisePredictor for Fixed {
    fn sample_shape(&self) -> (usize, usize, usize, usize) {
        self.0.dim()
    }
    fn predict(&self, _: &Array4<f64>, _: &ConditionBundle, _: usize) -> Result<Array4<f64>> {
        Ok(self.0.clone())
    }
}

fn sched(t: usize) -> NoiseSchedule {
    build_schedule(t, ScheduleKind::VpLinear).unwrap()
}

fn personal_cond() -> ConditionBundle {
    ConditionBundle {
        text: Some("a sks ball, front".into()),
        image: Some(ImageFeatures::new((0..64).map(|i| (i as f64 * 0.7).sin() / 5.0).collect(), "t")),
        reference: None,
    }
}

#[test]
fn perfect_predictor_has_zero_loss() {
    let eps = gaussian_noise((1, 3, 8, 8), Seed(3));
    let x0 = gaussian_noise((1, 3, 8, 8), Seed(4));
    assert_eq!(diffusion_loss(&Fixed(eps.clone()), &x0, &ConditionBundle::null(), 500, &eps, &sched(1000)).unwrap(), 0.0);
}

#[test]
fn zero_predictor_loss_is_noise_variance() {
    let shape = (1, 1, 100, 100);
    let eps = gaussian_noise(shape, Seed(9));
    let x0 = Array4::zeros(shape);
    let l = diffusion_loss(&Fixed(Array4::zeros(shape)), &x0, &ConditionBundle::null(), 700, &eps, &sched(1000)).unwrap();
    assert!((l - 1.0).abs() < 0.05, "{l}");
}

#[test]
fn loss_matches_straight_line_recomputation() {
    let s = sched(1000);
    let model = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(21)).unwrap();
    let cond = personal_cond();
    let shape = model.sample_shape();
    let x0 = gaussian_noise(shape, Seed(22)).mapv(f64::tanh);
    let eps = gaussian_noise(shape, Seed(23));
    for t in [1, 250, 999] {
        let x_t = forward_noise(&x0, &eps, t, &s).unwrap();
        let pred = model.predict(&x_t, &cond, t).unwrap();
        let mut sum = 0.0;
        for (e, p) in eps.iter().zip(pred.iter()) {
            sum += (e - p) * (e - p);
        }
        let oracle = sum / eps.len() as f64;
        let l = diffusion_loss(&model, &x0, &cond, t, &eps, &s).unwrap();
        assert!((l - oracle).abs() <= 1e-12 * oracle.max(1.0), "t={t}: {l} vs {oracle}");
    }
}

#[test]
fn loss_is_invariant_to_batch_permutation() {
    let s = sched(1000);
    let model = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(5)).unwrap();
    let items: Vec<_> = (0..4).map(|k| gaussian_noise(model.sample_shape(), Seed(30 + k))).collect();
    let noise: Vec<_> = (0..4).map(|k| gaussian_noise(model.sample_shape(), Seed(40 + k))).collect();
    let stack = |order: &[usize], src: &[Array4<f64>]| {
        let views: Vec<_> = order.iter().map(|&i| src[i].view()).collect();
        concatenate(Axis(0), &views).unwrap()
    };
    let a = diffusion_loss(&model, &stack(&[0, 1, 2, 3], &items), &personal_cond(), 300, &stack(&[0, 1, 2, 3], &noise), &s).unwrap();
    let b = diffusion_loss(&model, &stack(&[2, 0, 3, 1], &items), &personal_cond(), 300, &stack(&[2, 0, 3, 1], &noise), &s).unwrap();
    assert!((a - b).abs() < 1e-12 * a, "{a} vs {b}");
}

#[test]
fn guidance_identities() {
    let model = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(8)).unwrap();
    let x = gaussian_noise(model.sample_shape(), Seed(9));
    let cond = personal_cond();
    let c = model.predict(&x, &cond, 400).unwrap();
    let u = model.predict(&x, &ConditionBundle::null(), 400).unwrap();
    assert_ne!(c, u);
    assert_eq!(cfg_predict(&model, &x, &cond, 400, 1.0).unwrap(), c);
    assert_eq!(cfg_predict(&model, &x, &cond, 400, 0.0).unwrap(), u);
    let two = cfg_predict(&model, &x, &cond, 400, 2.0).unwrap();
    for ((g, a), b) in two.iter().zip(c.iter()).zip(u.iter()) {
        assert!((g - (2.0 * a - b)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn guidance_is_affine_in_w(w in -3.0f64..5.0, seed in 0u64..500) {
        let model = PatchDenoiser::new(DenoiserConfig::gradcheck_tiny(), Seed(seed)).unwrap();
        let x = gaussian_noise(model.sample_shape(), Seed(seed + 1));
        let cond = ConditionBundle {
            text: Some("a sks cone, back".into()),
            image: Some(ImageFeatures::new(vec![0.2, -0.1, 0.4, 0.3, -0.5], "t")),
            reference: Some(gaussian_noise((1, 3, 4, 4), Seed(seed + 2)).index_axis(Axis(0), 0).to_owned()),
        };
        let p0 = cfg_predict(&model, &x, &cond, 50, 0.0).unwrap();
        let ph = cfg_predict(&model, &x, &cond, 50, 0.5).unwrap();
        let p1 = cfg_predict(&model, &x, &cond, 50, 1.0).unwrap();
        let pw = cfg_predict(&model, &x, &cond, 50, w).unwrap();
        for i in 0..p0.len() {
            let (a, h, b, v) = (p0.as_slice().unwrap()[i], ph.as_slice().unwrap()[i], p1.as_slice().unwrap()[i], pw.as_slice().unwrap()[i]);
            prop_assert!((h - 0.5 * (a + b)).abs() < 1e-6);
            prop_assert!((v - ((1.0 - w) * a + w * b)).abs() < 1e-6);
        }
    }
}

#[test]
fn reverse_sampling_is_deterministic_and_bounded() {
    let s = sched(1000);
    let model = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(12)).unwrap();
    let cfg = SamplerConfig {
        steps: 10,
        guidance: 3.0,
        clip_denoised: true,
    };
    let a = reverse_sample(&model, &personal_cond(), &s, &cfg, Seed(4)).unwrap();
    let b = reverse_sample(&model, &personal_cond(), &s, &cfg, Seed(4)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_ne!(a, reverse_sample(&model, &personal_cond(), &s, &cfg, Seed(5)).unwrap());
    let too_many = SamplerConfig { steps: 1001, ..cfg };
    assert!(reverse_sample(&model, &personal_cond(), &s, &too_many, Seed(4)).is_err());
}

/// Exact ε-prediction for pixels drawn i.i.d. from N(μ, s²):
/// E[ε | x_t] = σ_t (x_t − α_t μ) / (α_t² s² + σ_t²).
struct GaussianOracle {
    mean: f64,
    std: f64,
    sched: NoiseSchedule,
    pixels: usize,
}

impl NoisePredictor for GaussianOracle {
    fn sample_shape(&self) -> (usize, usize, usize, usize) {
        (1, 1, 1, self.pixels)
    }
    fn predict(&self, x: &Array4<f64>, _: &ConditionBundle, t: usize) -> Result<Array4<f64>> {
        let (a, s) = (self.sched.alpha(t), self.sched.sigma(t));
        let v = a * a * self.std * self.std + s * s;
        Ok(x.mapv(|x| s * (x - a * self.mean) / v))
    }
}

#[test]
fn sampler_recovers_gaussian_data_mean() {
    let oracle = GaussianOracle {
        mean: 0.3,
        std: 0.05,
        sched: sched(200),
        pixels: 10_000,
    };
    for steps in [50, 200] {
        let cfg = SamplerConfig {
            steps,
            guidance: 1.0,
            clip_denoised: true,
        };
        let x = reverse_sample(&oracle, &ConditionBundle::null(), &oracle.sched, &cfg, Seed(77)).unwrap();
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let std = (x.mapv(|v| (v - mean).powi(2)).sum() / n).sqrt();
        println!("steps {steps}: mean {mean:.5}, std {std:.5}");
        if steps == 200 {
            assert!((mean - 0.3).abs() < 1e-3, "{mean}");
            assert!(std > 0.0 && std < 0.05, "{std}");
        }
    }
}
