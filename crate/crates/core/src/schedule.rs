//! Variance-preserving noise schedules.
//!
//! `vp-linear` is the continuous-time linear-β schedule
//! `ᾱ(τ) = exp(-(β_min·τ + ½(β_max − β_min)·τ²))` with `β_min = 0.1`,
//! `β_max = 20`, evaluated at `τ = t/T`. It is independent of `T`, so toy runs
//! with small `T` still reach near-pure noise at `t = T`.
//!
//! `vp-cosine` is `ᾱ(τ) = cos²(π/2 · (τ+s)/(1+s)) / cos²(π/2 · s/(1+s))` with
//! `s = 0.008`, floored at `1e-6` so every `α_t` stays positive.
//!
//! In both cases `α_t = √ᾱ` and `σ_t = √(1 − ᾱ)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LINEAR_BETA_MIN: f64 = 0.1;
pub const LINEAR_BETA_MAX: f64 = 20.0;
pub const COSINE_OFFSET: f64 = 0.008;
pub const COSINE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleKind {
    #[serde(rename = "vp-linear")]
    VpLinear,
    #[serde(rename = "vp-cosine")]
    VpCosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp-linear" | "variance-preserving-linear" => Ok(ScheduleKind::VpLinear),
            "vp-cosine" | "variance-preserving-cosine" => Ok(ScheduleKind::VpCosine),
            other => Err(Error::InvalidArgument(format!(
                "unknown schedule kind `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::VpLinear => "vp-linear",
            ScheduleKind::VpCosine => "vp-cosine",
        })
    }
}

/// Descriptor stored in checkpoints; the tables are rebuilt from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub num_steps: usize,
    pub kind: ScheduleKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    num_steps: usize,
    kind: ScheduleKind,
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

/// `-ln ᾱ(τ)` for the linear schedule.
fn linear_neg_log_alpha_bar(tau: f64) -> f64 {
    LINEAR_BETA_MIN * tau + 0.5 * (LINEAR_BETA_MAX - LINEAR_BETA_MIN) * tau * tau
}

fn cosine_alpha_bar(tau: f64) -> f64 {
    let f = |x: f64| {
        let c = ((x + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos();
        c * c
    };
    (f(tau) / f(0.0)).clamp(COSINE_FLOOR, 1.0)
}

pub fn build_schedule(num_steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
    }
    let mut alphas = Vec::with_capacity(num_steps + 1);
    let mut sigmas = Vec::with_capacity(num_steps + 1);
    for t in 0..=num_steps {
        let tau = t as f64 / num_steps as f64;
        let (a, s) = match kind {
            ScheduleKind::VpLinear => {
                let x = linear_neg_log_alpha_bar(tau);
                ((-0.5 * x).exp(), (-(-x).exp_m1()).sqrt())
            }
            ScheduleKind::VpCosine => {
                let ab = cosine_alpha_bar(tau);
                (ab.sqrt(), (1.0 - ab).max(0.0).sqrt())
            }
        };
        alphas.push(a);
        sigmas.push(s);
    }
    // the floor can tie neighbouring entries; keep the tables monotone
    for t in 1..=num_steps {
        alphas[t] = alphas[t].min(alphas[t - 1]);
        sigmas[t] = sigmas[t].max(sigmas[t - 1]);
    }
    Ok(NoiseSchedule {
        num_steps,
        kind,
        alphas,
        sigmas,
    })
}

impl NoiseSchedule {
    pub fn from_spec(spec: ScheduleSpec) -> Result<Self> {
        build_schedule(spec.num_steps, spec.kind)
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            num_steps: self.num_steps,
            kind: self.kind,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.num_steps {
            Err(Error::TimestepOutOfRange {
                t,
                max: self.num_steps,
            })
        } else {
            Ok(())
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    /// Decreasing grid `T = t_0 > t_1 > … > t_k = 0` for `k` inference steps.
    pub fn inference_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.num_steps {
            return Err(Error::InvalidArgument(format!(
                "inference steps must be in 1..={}, got {steps}",
                self.num_steps
            )));
        }
        Ok((0..=steps)
            .map(|i| {
                let k = (steps - i) as f64;
                (k * self.num_steps as f64 / steps as f64).round() as usize
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_zero() {
        for kind in [ScheduleKind::VpLinear, ScheduleKind::VpCosine] {
            let s = build_schedule(1000, kind).unwrap();
            assert_eq!(s.alpha(0), 1.0);
            assert_eq!(s.sigma(0), 0.0);
        }
    }

    #[test]
    fn cosine_is_variance_preserving() {
        let s = build_schedule(50, ScheduleKind::VpCosine).unwrap();
        for t in 0..=50 {
            let v = s.alpha(t).powi(2) + s.sigma(t).powi(2);
            assert!((v - 1.0).abs() < 1e-9, "t={t} v={v}");
        }
    }

    /// Frozen from an independent evaluation of the closed form
    /// (`scripts/schedule_oracle.py`).
    #[test]
    fn linear_t10_matches_closed_form_table() {
        const EXPECTED: [(f64, f64); 11] = include!("../testdata/vp_linear_t10.in");
        let s = build_schedule(10, ScheduleKind::VpLinear).unwrap();
        for (t, (a, sg)) in EXPECTED.iter().enumerate() {
            assert!((s.alpha(t) - a).abs() < 1e-12, "alpha[{t}]");
            assert!((s.sigma(t) - sg).abs() < 1e-12, "sigma[{t}]");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_schedule(0, ScheduleKind::VpLinear).is_err());
        assert!("vp-quadratic".parse::<ScheduleKind>().is_err());
        assert_eq!(
            "variance-preserving-cosine".parse::<ScheduleKind>().unwrap(),
            ScheduleKind::VpCosine
        );
    }

    #[test]
    fn timestep_grid() {
        let s = build_schedule(10, ScheduleKind::VpLinear).unwrap();
        assert_eq!(s.inference_timesteps(10).unwrap(), (0..=10).rev().collect::<Vec<_>>());
        assert_eq!(s.inference_timesteps(4).unwrap(), vec![10, 8, 5, 3, 0]);
        assert!(s.inference_timesteps(11).is_err());
    }
}
