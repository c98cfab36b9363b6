//! Run configuration: a TOML document with `[subject]`, optional model,
//! training, sampler and reconstruction sections, resolved against a preset.
//! Unknown keys are errors everywhere.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use coevo_core::denoiser::DenoiserConfig;
use coevo_core::diffusion::SamplerConfig;
use coevo_core::mvdiffusion::MVTrainConfig;
use coevo_core::personalizer::PersonalizerTrainConfig;
use coevo_core::pretrain::PretrainConfig;
use coevo_recon::{FitConfig, MeshFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 32×32 models pretrained on the synthetic corpus.
    #[default]
    Toy,
    /// 256×256 models; base checkpoints must be supplied.
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

/// How the final views are sampled from the two optimized models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CascadeMode {
    /// View 1 from the personalized model, views 2..N from the multi-view
    /// model conditioned on view 1.
    #[default]
    Cascade,
    /// Every view from the multi-view model conditioned on the subject image.
    MultiviewOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectSpec {
    /// Subject image file. Exactly one of `image` and `corpus_subject` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    /// Id of a synthetic corpus subject whose front view is the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_subject: Option<String>,
    /// Text modification; empty for plain reconstruction.
    #[serde(default)]
    pub text: String,
    #[serde(default = "default_identifier")]
    pub identifier: String,
    /// Defaults to the corpus subject's class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_noun: Option<String>,
    /// Reference caption for retrieval evaluation; defaults to the corpus
    /// description.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub seed: u64,
}

fn default_identifier() -> String {
    "sks".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseModelConfig {
    pub personalizer: DenoiserConfig,
    pub multiview: DenoiserConfig,
    pub personalizer_pretrain: PretrainConfig,
    pub multiview_pretrain: PretrainConfig,
    pub personalizer_seed: u64,
    pub multiview_seed: u64,
    /// Full checkpoints to use instead of pretraining.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personalizer_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiview_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub fit: FitConfig,
    pub field_resolution: usize,
    pub half_extent: f64,
    /// Iso level; half the field maximum when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iso: Option<f64>,
    pub mesh_formats: Vec<MeshFormat>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            field_resolution: 64,
            half_extent: 1.0,
            iso: None,
            mesh_formats: vec![MeshFormat::PlyBinary, MeshFormat::Obj],
        }
    }
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub subject: SubjectSpec,
    pub base_models: BaseModelConfig,
    pub personalizer: PersonalizerTrainConfig,
    pub multiview: MVTrainConfig,
    pub sampler: SamplerConfig,
    pub cascade: CascadeMode,
    pub reconstruction: ReconstructionConfig,
}

/// The document as written: every section but `[subject]` may be omitted.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    preset: Option<Preset>,
    subject: SubjectSpec,
    #[serde(default)]
    base_models: Option<BaseModelConfig>,
    #[serde(default)]
    personalizer: Option<PersonalizerTrainConfig>,
    #[serde(default)]
    multiview: Option<MVTrainConfig>,
    #[serde(default)]
    sampler: Option<SamplerConfig>,
    #[serde(default)]
    cascade: Option<CascadeMode>,
    #[serde(default)]
    reconstruction: Option<ReconstructionConfig>,
}

impl BaseModelConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let (personalizer, multiview) = match preset {
            Preset::Toy => (DenoiserConfig::personalizer_toy(), DenoiserConfig::multiview_toy()),
            Preset::Full => (
                DenoiserConfig::personalizer_toy().scaled_to(256),
                DenoiserConfig::multiview_toy().scaled_to(256),
            ),
        };
        Self {
            personalizer,
            multiview,
            personalizer_pretrain: PretrainConfig::personalizer(),
            multiview_pretrain: PretrainConfig::multiview(),
            personalizer_seed: 1,
            multiview_seed: 2,
            personalizer_checkpoint: None,
            multiview_checkpoint: None,
        }
    }
}

impl PipelineConfig {
    /// Defaults of `preset` for a subject.
    pub fn preset(preset: Preset, subject: SubjectSpec) -> Self {
        let (personalizer, multiview) = match preset {
            Preset::Toy => (PersonalizerTrainConfig::toy(), MVTrainConfig::toy()),
            Preset::Full => (PersonalizerTrainConfig::default(), MVTrainConfig::default()),
        };
        Self {
            preset,
            subject,
            base_models: BaseModelConfig::for_preset(preset),
            personalizer,
            multiview,
            sampler: SamplerConfig::default(),
            cascade: CascadeMode::default(),
            reconstruction: ReconstructionConfig::default(),
        }
    }

    /// Toy configuration for a corpus subject.
    pub fn toy_for_corpus(subject_id: &str, seed: u64) -> Self {
        Self::preset(
            Preset::Toy,
            SubjectSpec {
                image: None,
                corpus_subject: Some(subject_id.into()),
                text: String::new(),
                identifier: default_identifier(),
                class_noun: None,
                prompt: None,
                seed,
            },
        )
    }

    /// Parses a TOML document. `preset_override` wins over the document's
    /// `preset`; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, preset_override: Option<Preset>, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let preset = preset_override.or(raw.preset).unwrap_or_default();
        let defaults = Self::preset(preset, raw.subject.clone());
        let mut cfg = Self {
            preset,
            subject: raw.subject,
            base_models: raw.base_models.unwrap_or(defaults.base_models),
            personalizer: raw.personalizer.unwrap_or(defaults.personalizer),
            multiview: raw.multiview.unwrap_or(defaults.multiview),
            sampler: raw.sampler.unwrap_or(defaults.sampler),
            cascade: raw.cascade.unwrap_or(defaults.cascade),
            reconstruction: raw.reconstruction.unwrap_or(defaults.reconstruction),
        };
        let absolute = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base_dir.join(&*path);
                }
            }
        };
        absolute(&mut cfg.subject.image);
        absolute(&mut cfg.base_models.personalizer_checkpoint);
        absolute(&mut cfg.base_models.multiview_checkpoint);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset_override: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, preset_override, dir)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.subject;
        if s.image.is_some() == s.corpus_subject.is_some() {
            return Err(Error::Config(
                "subject needs exactly one of `image` and `corpus_subject`".into(),
            ));
        }
        if s.image.is_some() && s.class_noun.is_none() {
            return Err(Error::Config("subject `class_noun` is required with `image`".into()));
        }
        if s.identifier.trim().is_empty() || s.identifier.contains(char::is_whitespace) {
            return Err(Error::Config("subject `identifier` must be a single word".into()));
        }
        if self.preset == Preset::Full
            && (self.base_models.personalizer_checkpoint.is_none() || self.base_models.multiview_checkpoint.is_none())
        {
            return Err(Error::Config(
                "the full preset needs base_models.personalizer_checkpoint and multiview_checkpoint".into(),
            ));
        }
        if self.reconstruction.mesh_formats.is_empty() {
            return Err(Error::Config("reconstruction.mesh_formats is empty".into()));
        }
        self.personalizer.validate()?;
        self.multiview.validate()?;
        self.base_models.personalizer.validate()?;
        self.base_models.multiview.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
