//! Task configuration (`TaskConfig`, JSON, versioned).

use std::path::{Path, PathBuf};

use localdom_core::gan::GanConfig;
use localdom_core::inference::{CompositeMode, InferenceConfig, MaskSource};
use localdom_core::priors::{DomainTable, LocalDomainId, PriorRule};
use localdom_core::rng::derive_seed;
use localdom_core::vae::VaeConfig;
use serde::{Deserialize, Serialize};

use crate::fsutil::read_bytes;
use crate::{PipelineError, Result};

pub const TASK_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LaneDegradation,
    SnowAddition,
    Deblurring,
    Custom,
}

/// Patch size and count; the sampling seed is derived from the task seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub size: usize,
    pub per_image: usize,
}

/// Where translated pixels may land, by domain name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Composite {
    #[default]
    BetaRegion,
    ExcludeForeground { foreground: String },
}

fn d_z() -> f64 {
    0.65
}
fn d_gamma() -> f64 {
    0.75
}
fn d_z_range() -> [f64; 2] {
    [0.35, 0.95]
}
fn d_gamma_range() -> [f64; 2] {
    [0.2, 1.0]
}
fn d_overlap() -> usize {
    8
}
fn d_bins() -> usize {
    32
}
fn d_z_sweep() -> Vec<f64> {
    vec![0.35, 0.5, 0.65, 0.8, 0.95]
}

/// Mask-VAE interpolation settings; present exactly when the VAE is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interpolation {
    pub vae: VaeConfig,
    #[serde(default)]
    pub mask_source: MaskSource,
    #[serde(default = "d_z")]
    pub z: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_z_range")]
    pub z_range: [f64; 2],
    #[serde(default = "d_gamma_range")]
    pub gamma_range: [f64; 2],
    #[serde(default = "d_overlap")]
    pub tile_overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Manifest of target-like images for the domain-gap estimate.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default = "d_bins")]
    pub bins: usize,
    /// `z` values of the edit-magnitude sweep (interpolating tasks only).
    #[serde(default = "d_z_sweep")]
    pub z_sweep: Vec<f64>,
}

impl Default for Evaluation {
    fn default() -> Self {
        Self {
            reference: None,
            bins: d_bins(),
            z_sweep: d_z_sweep(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub schema_version: u32,
    pub task: TaskKind,
    pub domains: DomainTable,
    /// Target local domain (what β is mapped into).
    pub alpha: String,
    /// Source local domain (the region that gets edited).
    pub beta: String,
    pub prior: PriorRule,
    /// Dataset manifest, relative to the config file.
    pub dataset: PathBuf,
    pub patches: Vec<PatchPlan>,
    pub gan: GanConfig,
    #[serde(default)]
    pub interpolation: Option<Interpolation>,
    #[serde(default)]
    pub composite: Composite,
    #[serde(default)]
    pub p_aug: f64,
    #[serde(default)]
    pub evaluation: Evaluation,
    #[serde(default)]
    pub seed: u64,
}

impl TaskConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| PipelineError::BadSchema(format!("task config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_bytes(path)?)
    }

    pub fn alpha_id(&self) -> Result<LocalDomainId> {
        Ok(self.domains.id_of(&self.alpha)?)
    }

    pub fn beta_id(&self) -> Result<LocalDomainId> {
        Ok(self.domains.id_of(&self.beta)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| match e {
            PipelineError::Core(c) => PipelineError::BadSchema(c.to_string()),
            e => e,
        })
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::BadSchema(m));
        if self.schema_version != TASK_SCHEMA {
            return bad(format!("task schema_version {} (expected {TASK_SCHEMA})", self.schema_version));
        }
        let (a, b) = (self.alpha_id()?, self.beta_id()?);
        if a == b || a == 0 || b == 0 {
            return bad("alpha and beta must be two distinct declared domains other than `other`".into());
        }
        if !(0.0..=1.0).contains(&self.p_aug) {
            return bad(format!("p_aug = {} outside [0, 1]", self.p_aug));
        }
        if self.patches.is_empty() || self.patches.iter().any(|p| p.size == 0 || p.per_image == 0) {
            return bad("patches needs at least one entry with size ≥ 1 and per_image ≥ 1".into());
        }
        let rule_fits = matches!(
            (self.task, &self.prior),
            (TaskKind::LaneDegradation, PriorRule::Lane { .. })
                | (TaskKind::SnowAddition, PriorRule::Semantic { .. })
                | (TaskKind::Deblurring, PriorRule::Fixed { .. })
                | (TaskKind::Custom, _)
        );
        if !rule_fits {
            return bad(format!("prior rule does not fit task {:?}", self.task));
        }
        if let Composite::ExcludeForeground { foreground } = &self.composite {
            self.domains.id_of(foreground)?;
        }
        if self.evaluation.bins == 0 || self.evaluation.z_sweep.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return bad("evaluation needs bins ≥ 1 and z_sweep values in [0, 1]".into());
        }
        self.gan.validate()?;
        if let Some(i) = &self.interpolation {
            i.vae.validate()?;
        }
        self.inference()?.validate()?;
        Ok(())
    }

    /// Inference settings handed to the translator bundle.
    pub fn inference(&self) -> Result<InferenceConfig> {
        let mut inf = InferenceConfig::new(self.alpha_id()?, self.beta_id()?);
        inf.composite = match &self.composite {
            Composite::BetaRegion => CompositeMode::BetaRegion,
            Composite::ExcludeForeground { foreground } => CompositeMode::ExcludeForeground {
                foreground: self.domains.id_of(foreground)?,
            },
        };
        if let Some(i) = &self.interpolation {
            inf.mask_source = i.mask_source;
            inf.z = i.z;
            inf.gamma = i.gamma;
            inf.z_range = i.z_range;
            inf.gamma_range = i.gamma_range;
            inf.tile_overlap = i.tile_overlap;
        }
        Ok(inf)
    }

    /// Copy with every component seed derived from the task seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.gan.seed = derive_seed(self.seed, "gan");
        if let Some(i) = c.interpolation.as_mut() {
            i.vae.seed = derive_seed(self.seed, "vae");
        }
        c
    }

    pub fn patch_seed(&self) -> u64 {
        derive_seed(self.seed, "patches")
    }

    pub fn augment_seed(&self) -> u64 {
        derive_seed(self.seed, "augment")
    }
}
