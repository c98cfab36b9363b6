//! Self-describing JSON checkpoints.
//!
//! A full checkpoint stores every parameter group; a delta stores a subset
//! plus the digest of the base model it applies to. Both carry the model
//! configuration, the schedule descriptor, a format version and the SHA-256
//! parameter digest of the model they describe, which is verified on load.
//! Floats are written in shortest round-trip form, so save → load is
//! bitwise exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserConfig, PatchDenoiser};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamSet};
use crate::schedule::{NoiseSchedule, ScheduleSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Digest of the model the delta was trained from.
    pub base_digest: String,
    pub seed: u64,
    /// Training configuration, free-form.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: DenoiserConfig,
    pub schedule: ScheduleSpec,
    pub groups: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    /// Parameter digest of the full model (after applying a delta).
    pub digest: String,
}

impl Checkpoint {
    pub fn full(model: &PatchDenoiser, sched: &NoiseSchedule) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model: model.config().clone(),
            schedule: sched.spec(),
            groups: model.params().to_map(),
            provenance: None,
            digest: model.digest(),
        }
    }

    /// Only `groups` of `model`, to be applied on top of `base_digest`.
    pub fn delta(
        model: &PatchDenoiser,
        sched: &NoiseSchedule,
        groups: &[ParamGroup],
        provenance: Provenance,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model: model.config().clone(),
            schedule: sched.spec(),
            groups: groups
                .iter()
                .map(|g| (g.name().to_string(), model.params().group(*g).to_vec()))
                .collect(),
            provenance: Some(provenance),
            digest: model.digest(),
        }
    }

    pub fn is_delta(&self) -> bool {
        self.provenance.is_some()
    }

    fn check_version(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        Ok(())
    }

    fn verify(&self, model: &PatchDenoiser) -> Result<()> {
        let actual = model.digest();
        if actual != self.digest {
            return Err(Error::Checkpoint(format!(
                "parameter digest mismatch: recorded {}, computed {actual}",
                self.digest
            )));
        }
        Ok(())
    }

    /// Model and schedule from a full checkpoint.
    pub fn into_model(self) -> Result<(PatchDenoiser, NoiseSchedule)> {
        self.check_version()?;
        if self.is_delta() {
            return Err(Error::Checkpoint("delta checkpoint needs a base model".into()));
        }
        let params = ParamSet::from_map(&self.groups)?;
        let model = PatchDenoiser::from_params(self.model.clone(), params)?;
        self.verify(&model)?;
        Ok((model, NoiseSchedule::from_spec(self.schedule)?))
    }

    /// Applies a delta to `base`, checking both the base and result digests.
    pub fn apply_to(&self, base: &PatchDenoiser) -> Result<PatchDenoiser> {
        self.check_version()?;
        let prov = self
            .provenance
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("not a delta checkpoint".into()))?;
        if base.digest() != prov.base_digest {
            return Err(Error::Checkpoint(format!(
                "delta expects base {}, got {}",
                prov.base_digest,
                base.digest()
            )));
        }
        if base.config() != &self.model {
            return Err(Error::Checkpoint("delta model configuration differs from base".into()));
        }
        let mut model = base.clone();
        for (name, values) in &self.groups {
            let g = ParamGroup::from_name(name)
                .ok_or_else(|| Error::GroupMismatch(format!("unknown group `{name}`")))?;
            let dst = model.params_mut().group_mut(g);
            if dst.len() != values.len() {
                return Err(Error::GroupMismatch(format!(
                    "group `{name}` has {} values, model expects {}",
                    values.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(values);
        }
        self.verify(&model)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.check_version()?;
        Ok(ck)
    }
}
