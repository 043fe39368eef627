//! Images plus geometric priors for the entries of a manifest.

use localdom_core::priors::{build_prior, GeometricPrior, LaneLabels, Labels};
use localdom_core::{Grid, Image};

use crate::config::TaskConfig;
use crate::fsutil::AccessAudit;
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::{PipelineError, Result};

#[derive(Clone, Debug)]
pub struct Sample {
    pub entry: ManifestEntry,
    pub image: Image,
    pub prior: GeometricPrior,
}

/// Geometric prior of one entry under the task's prior rule.
pub fn entry_prior(
    cfg: &TaskConfig,
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    dims: (usize, usize),
    audit: &mut AccessAudit,
) -> Result<GeometricPrior> {
    use localdom_core::priors::PriorRule;
    let label_path = manifest.label_path(entry);
    let missing = || PipelineError::BadSchema(format!("entry `{}` needs a label for this prior rule", entry.id));
    let (h, w) = dims;
    let prior = match &cfg.prior {
        PriorRule::Lane { .. } => {
            let path = label_path.ok_or_else(missing)?;
            let lanes: LaneLabels = serde_json::from_slice(&audit.read(&path)?)
                .map_err(|source| PipelineError::Json { path: path.clone(), source })?;
            build_prior(&cfg.prior, Labels::Lanes(&lanes), &cfg.domains, h, w)?
        }
        PriorRule::Semantic { .. } => {
            let path = label_path.ok_or_else(missing)?;
            audit.check(&path)?;
            let map = Grid::<u8>::load_png(&path)?;
            build_prior(&cfg.prior, Labels::Semantic(&map), &cfg.domains, h, w)?
        }
        PriorRule::Fixed { .. } => build_prior(&cfg.prior, Labels::None, &cfg.domains, h, w)?,
    };
    Ok(prior)
}

pub fn load_sample(cfg: &TaskConfig, manifest: &DatasetManifest, entry: &ManifestEntry, audit: &mut AccessAudit) -> Result<Sample> {
    let path = manifest.image_path(entry);
    audit.check(&path)?;
    let image = Image::load_png(&path)?;
    let prior = entry_prior(cfg, manifest, entry, image.dims(), audit)?;
    Ok(Sample {
        entry: entry.clone(),
        image,
        prior,
    })
}

/// Every entry of `split`, in manifest (id) order.
pub fn load_split(cfg: &TaskConfig, manifest: &DatasetManifest, split: Split, audit: &mut AccessAudit) -> Result<Vec<Sample>> {
    manifest
        .split(split)
        .map(|e| load_sample(cfg, manifest, e, audit))
        .collect()
}
