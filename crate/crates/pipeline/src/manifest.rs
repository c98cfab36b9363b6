//! The run manifest: one record per executed stage, rewritten after every
//! stage so an interrupted run can be resumed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MultiviewLift,
    IdentityAwareOpt,
    Diversify,
    SubjectPriorOpt,
    CascadeSample,
    Reconstruction,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::MultiviewLift,
        Stage::IdentityAwareOpt,
        Stage::Diversify,
        Stage::SubjectPriorOpt,
        Stage::CascadeSample,
        Stage::Reconstruction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::MultiviewLift => "multiview_lift",
            Stage::IdentityAwareOpt => "identity_aware_opt",
            Stage::Diversify => "diversify",
            Stage::SubjectPriorOpt => "subject_prior_opt",
            Stage::CascadeSample => "cascade_sample",
            Stage::Reconstruction => "reconstruction",
        }
    }

    pub fn index(self) -> usize {
        Stage::ALL.iter().position(|&s| s == self).expect("stage listed")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
}

/// A file written by a stage, relative to the workspace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointId {
    pub name: String,
    /// Parameter digest of the full model.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub seconds: f64,
    pub seed: u64,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointId>,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub root_seed: u64,
    pub base_personalizer: CheckpointId,
    pub base_multiview: CheckpointId,
    pub stages: Vec<StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn completed(&self) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(|r| r.status == StageStatus::Completed)
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.completed().find(|r| r.stage == stage)
    }

    /// Last completed stage, if any.
    pub fn last_completed(&self) -> Option<Stage> {
        self.completed().map(|r| r.stage).max()
    }

    /// Completed stages must form a prefix of the fixed order, with at most
    /// one failed record after them.
    pub fn check_order(&self) -> Result<()> {
        for (i, r) in self.stages.iter().enumerate() {
            if Stage::ALL.get(i) != Some(&r.stage) || (r.status == StageStatus::Failed && i + 1 != self.stages.len()) {
                return Err(Error::Manifest(format!(
                    "stage records out of order at position {i} ({})",
                    r.stage
                )));
            }
        }
        Ok(())
    }

    /// Every artifact of every completed stage exists with its recorded hash.
    pub fn verify_artifacts(&self, workspace: &Path) -> Result<()> {
        for r in self.completed() {
            for a in &r.artifacts {
                let p = workspace.join(&a.path);
                if !p.exists() {
                    return Err(Error::MissingArtifact {
                        stage: r.stage,
                        path: a.path.clone(),
                    });
                }
                let actual = sha256_file(&p)?;
                if actual != a.sha256 {
                    return Err(Error::TamperedArtifact {
                        path: a.path.clone(),
                        recorded: a.sha256.clone(),
                        actual,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(workspace: &Path) -> Result<Self> {
        let p = workspace.join(MANIFEST_FILE);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let m: RunManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Manifest(format!("{}: {e}", p.display())))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        m.check_order()?;
        Ok(m)
    }

    /// Writes the manifest after checking that every listed artifact exists.
    pub fn save(&self, workspace: &Path) -> Result<()> {
        for r in &self.stages {
            for a in &r.artifacts {
                if !workspace.join(&a.path).exists() {
                    return Err(Error::MissingArtifact {
                        stage: r.stage,
                        path: a.path.clone(),
                    });
                }
            }
        }
        let p = workspace.join(MANIFEST_FILE);
        let tmp = workspace.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &p).map_err(|e| Error::io(&p, e))
    }
}
