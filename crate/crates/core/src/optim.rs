use serde::{Deserialize, Serialize};

use crate::params::{ParamGroup, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// AdamW with decoupled weight decay, restricted to a set of groups.
/// Parameters in other groups are never touched.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamConfig,
    groups: Vec<ParamGroup>,
    m: ParamSet,
    v: ParamSet,
    step: i32,
}

impl AdamW {
    pub fn new(cfg: AdamConfig, like: &ParamSet, groups: &[ParamGroup]) -> Self {
        Self {
            cfg,
            groups: groups.to_vec(),
            m: ParamSet::zeros_like(like),
            v: ParamSet::zeros_like(like),
            step: 0,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for &g in &self.groups {
            let p = params.group_mut(g);
            let gr = grads.group(g);
            let m = self.m.group_mut(g);
            let v = self.v.group_mut(g);
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gr[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gr[i] * gr[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= c.learning_rate * (mh / (vh.sqrt() + c.eps) + c.weight_decay * p[i]);
            }
        }
    }
}
