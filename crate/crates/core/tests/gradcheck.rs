use coevo_core::denoiser::{DenoiserConfig, PatchDenoiser};
use coevo_core::diffusion::{diffusion_loss, diffusion_loss_and_grad, ConditionBundle};
use coevo_core::encoder::ImageFeatures;
use coevo_core::image::gaussian_noise;
use coevo_core::mvdiffusion::{subject_prior_loss, subject_prior_loss_and_grad};
use coevo_core::params::ParamSet;
use coevo_core::schedule::{build_schedule, ScheduleKind};
use coevo_core::seed::Seed;
use ndarray::Array3;

const H: f64 = 1e-6;

fn cond(with_text: bool, with_image: bool) -> ConditionBundle {
    ConditionBundle {
        text: with_text.then(|| "a sks dog, front".to_string()),
        image: with_image.then(|| ImageFeatures::new(vec![0.3, -0.2, 0.5, 0.1, -0.4], "t")),
        reference: Some(Array3::from_shape_fn((3, 4, 4), |(c, i, j)| {
            ((c * 16 + i * 4 + j) as f64 * 0.37).sin()
        })),
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

fn check(analytic: &ParamSet, model: &PatchDenoiser, loss: impl Fn(&PatchDenoiser) -> f64) -> (usize, usize, f64) {
    let mut bad = 0;
    let mut worst = 0.0f64;
    let n = model.num_params();
    for i in 0..n {
        let mut p = model.clone();
        let x = p.params().get_flat(i);
        p.params_mut().set_flat(i, x + H);
        let up = loss(&p);
        p.params_mut().set_flat(i, x - H);
        let down = loss(&p);
        let num = (up - down) / (2.0 * H);
        let e = rel_err(analytic.get_flat(i), num);
        worst = worst.max(e);
        if e >= 1e-4 {
            bad += 1;
        }
    }
    (bad, n, worst)
}

#[test]
fn diffusion_loss_gradient_matches_finite_differences() {
    let cfg = DenoiserConfig::gradcheck_tiny();
    let sched = build_schedule(cfg.num_train_steps, ScheduleKind::VpLinear).unwrap();
    let model = PatchDenoiser::new(cfg, Seed(11)).unwrap();
    assert!(model.num_params() <= 1000, "{}", model.num_params());
    let shape = model.sample_shape();
    for (k, (text, image)) in [(true, true), (false, true), (true, false), (false, false)]
        .into_iter()
        .enumerate()
    {
        let c = cond(text, image);
        let x0 = gaussian_noise(shape, Seed(20 + k as u64)).mapv(|v| v.tanh());
        let eps = gaussian_noise(shape, Seed(40 + k as u64));
        let t = 17 + 20 * k;
        let (_, g) = diffusion_loss_and_grad(&model, &x0, &c, t, &eps, &sched).unwrap();
        let (bad, n, worst) = check(&g, &model, |m| {
            diffusion_loss(m, &x0, &c, t, &eps, &sched).unwrap()
        });
        assert!(bad * 100 <= n, "case {k}: {bad}/{n} coordinates off, worst {worst:e}");
    }
}

#[test]
fn subject_prior_gradient_matches_finite_differences() {
    let cfg = DenoiserConfig::gradcheck_tiny();
    let sched = build_schedule(cfg.num_train_steps, ScheduleKind::VpLinear).unwrap();
    let theta0 = PatchDenoiser::new(cfg, Seed(5)).unwrap();
    let mut model = theta0.clone();
    // drift every coordinate away from θ0 by more than the FD step
    let mut rng = Seed(6).rng();
    for i in 0..model.num_params() {
        let x = model.params().get_flat(i);
        let d: f64 = rand::Rng::random_range(&mut rng, 1e-3..1e-2);
        let s = if rand::Rng::random::<bool>(&mut rng) { d } else { -d };
        model.params_mut().set_flat(i, x + s);
    }
    let snap = theta0.snapshot();
    let shape = model.sample_shape();
    let x0 = gaussian_noise(shape, Seed(7)).mapv(|v| v.tanh());
    let eps = gaussian_noise(shape, Seed(8));
    let c = cond(false, false);
    for lambda in [1.0, 50.0] {
        let (_, g) = subject_prior_loss_and_grad(&model, &snap, &x0, &c, 33, &eps, lambda, &sched).unwrap();
        let (bad, n, worst) = check(&g, &model, |m| {
            subject_prior_loss(m, &snap, &x0, &c, 33, &eps, lambda, &sched)
                .unwrap()
                .total
        });
        assert!(bad * 100 <= n, "λ={lambda}: {bad}/{n} coordinates off, worst {worst:e}");
    }
}
