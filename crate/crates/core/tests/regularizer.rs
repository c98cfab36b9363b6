use coevo_core::denoiser::{DenoiserConfig, PatchDenoiser};
use coevo_core::diffusion::{diffusion_loss, ConditionBundle};
use coevo_core::encoder::ImageFeatures;
use coevo_core::image::gaussian_noise;
use coevo_core::mvdiffusion::{drift_regularizer, drift_regularizer_grad, subject_prior_loss};
use coevo_core::params::ParamGroup;
use coevo_core::schedule::{build_schedule, ScheduleKind};
use coevo_core::Seed;
use ndarray::Array3;
use proptest::prelude::*;

fn cond() -> ConditionBundle {
    ConditionBundle {
        text: None,
        image: Some(ImageFeatures::new(vec![0.1, 0.4, -0.3, 0.2, 0.0], "t")),
        reference: Some(Array3::from_shape_fn((3, 4, 4), |(c, i, j)| ((c + 2 * i + 3 * j) as f64).cos() * 0.5)),
    }
}

fn tiny(seed: u64) -> PatchDenoiser {
    PatchDenoiser::new(DenoiserConfig::gradcheck_tiny(), Seed(seed)).unwrap()
}

#[test]
fn regularizer_vanishes_at_theta0() {
    let m = tiny(1);
    let sched = build_schedule(100, ScheduleKind::VpLinear).unwrap();
    let theta0 = m.snapshot();
    let x0 = gaussian_noise(m.sample_shape(), Seed(2));
    let eps = gaussian_noise(m.sample_shape(), Seed(3));
    for lambda in [0.0, 1.0, 1e6] {
        let l = subject_prior_loss(&m, &theta0, &x0, &cond(), 40, &eps, lambda, &sched).unwrap();
        assert_eq!(l.regularizer, 0.0);
        assert_eq!(l.total, l.diffusion);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_coordinate_shift(seed in 0u64..1000, idx in 0usize..10_000, delta in -2.0f64..2.0, lambda in 0.0f64..100.0) {
        let m = tiny(seed);
        let n = m.num_params();
        let i = idx % n;
        let theta0 = m.snapshot();
        let mut p = m.clone();
        let x = p.params().get_flat(i);
        p.params_mut().set_flat(i, x + delta);
        let step = (x + delta) - x;
        let r = drift_regularizer(p.params(), &theta0.0, lambda);
        prop_assert_eq!(r, lambda * step.abs() / n as f64);

        let sched = build_schedule(100, ScheduleKind::VpLinear).unwrap();
        let x0 = gaussian_noise(m.sample_shape(), Seed(seed + 1));
        let eps = gaussian_noise(m.sample_shape(), Seed(seed + 2));
        let l = subject_prior_loss(&p, &theta0, &x0, &cond(), 30, &eps, lambda, &sched).unwrap();
        prop_assert_eq!(l.regularizer, r);
    }

    #[test]
    fn decomposition_matches_recomputation(seed in 0u64..1000, lambda in 0.0f64..10.0, t in 1usize..=100) {
        let m = tiny(seed);
        let theta0 = m.snapshot();
        let mut p = m.clone();
        let drift = gaussian_noise((1, 1, 1, p.num_params()), Seed(seed ^ 0xabc));
        for (i, d) in drift.iter().enumerate() {
            let v = p.params().get_flat(i) + 0.01 * d;
            p.params_mut().set_flat(i, v);
        }
        let sched = build_schedule(100, ScheduleKind::VpLinear).unwrap();
        let x0 = gaussian_noise(m.sample_shape(), Seed(seed + 5));
        let eps = gaussian_noise(m.sample_shape(), Seed(seed + 6));
        let l = subject_prior_loss(&p, &theta0, &x0, &cond(), t, &eps, lambda, &sched).unwrap();

        let diff = diffusion_loss(&p, &x0, &cond(), t, &eps, &sched).unwrap();
        let n = p.num_params();
        let l1: f64 = (0..n).map(|i| (p.params().get_flat(i) - m.params().get_flat(i)).abs()).sum();
        let reg = lambda * l1 / n as f64;
        prop_assert!((l.diffusion - diff).abs() <= 1e-9);
        prop_assert!((l.regularizer - reg).abs() <= 1e-9);
        prop_assert!((l.total - (diff + reg)).abs() <= 1e-9);
    }

    #[test]
    fn regularizer_is_homogeneous_in_lambda_and_drift(seed in 0u64..1000, s in 0.0f64..8.0) {
        let m = tiny(seed);
        let base = m.params().clone();
        let mut moved = base.clone();
        moved.add_scaled(&gaussian_params(&base, seed), 1.0);
        let mut scaled = base.clone();
        scaled.add_scaled(&gaussian_params(&base, seed), s);
        let r1 = drift_regularizer(&moved, &base, 1.0);
        prop_assert!((drift_regularizer(&moved, &base, s) - s * r1).abs() <= 1e-12 * (1.0 + s * r1));
        prop_assert!((drift_regularizer(&scaled, &base, 1.0) - s * r1).abs() <= 1e-9 * (1.0 + s * r1));
    }
}

fn gaussian_params(like: &coevo_core::params::ParamSet, seed: u64) -> coevo_core::params::ParamSet {
    let mut g = like.clone();
    let noise = gaussian_noise((1, 1, 1, like.total_len()), Seed(seed).derive("drift"));
    for (i, v) in noise.iter().enumerate() {
        g.set_flat(i, *v);
    }
    g
}

#[test]
fn gradient_is_scaled_sign() {
    let m = tiny(9);
    let theta0 = m.params().clone();
    let mut p = theta0.clone();
    let n = p.total_len();
    p.set_flat(0, theta0.get_flat(0) + 0.5);
    p.set_flat(n - 1, theta0.get_flat(n - 1) - 0.25);
    let g = drift_regularizer_grad(&p, &theta0, 3.0);
    assert_eq!(g.get_flat(0), 3.0 / n as f64);
    assert_eq!(g.get_flat(n - 1), -3.0 / n as f64);
    for i in 1..n - 1 {
        assert_eq!(g.get_flat(i), 0.0);
    }
}

#[test]
fn every_group_counts_toward_drift() {
    let m = tiny(4);
    let theta0 = m.params().clone();
    for grp in ParamGroup::ALL {
        let mut p = theta0.clone();
        if p.group(grp).is_empty() {
            continue;
        }
        p.group_mut(grp)[0] += 1.0;
        assert!(drift_regularizer(&p, &theta0, 1.0) > 0.0, "{grp}");
    }
}

#[test]
fn snapshot_layout_is_checked() {
    let m = tiny(1);
    let other = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(1)).unwrap();
    let sched = build_schedule(100, ScheduleKind::VpLinear).unwrap();
    let x0 = gaussian_noise(m.sample_shape(), Seed(2));
    assert!(subject_prior_loss(&m, &other.snapshot(), &x0, &cond(), 10, &x0, 1.0, &sched).is_err());
}
