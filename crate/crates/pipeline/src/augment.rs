//! Dataset augmentation with hallucinated images.

use std::path::Path;

use localdom_core::inference::{hallucinate, TranslatorBundle};
use localdom_core::priors::GeometricPrior;
use localdom_core::rng;
use localdom_core::vae::{Sampling, ZGamma};
use localdom_core::Image;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fsutil::{read_bytes, sha256_hex, write_atomic};
use crate::manifest::{DatasetManifest, ManifestEntry, Provenance, Split, MANIFEST_SCHEMA};
use crate::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub p_aug: f64,
    /// `None` keeps the bundle's default `(z, γ)`; needs a mask VAE otherwise.
    pub z_range: Option<[f64; 2]>,
    pub gamma_range: [f64; 2],
    pub seed: u64,
}

/// Per-entry draws, fixed by `(seed, id)` alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    pub replace: bool,
    pub z: f64,
    pub gamma: f64,
}

fn uniform(r: &mut rng::Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

pub fn draw(opts: &AugmentOptions, id: &str) -> (Draw, rng::Rng) {
    let mut r = rng::stream(opts.seed, &format!("augment/{id}"));
    let replace = r.random::<f64>() < opts.p_aug;
    let z = uniform(&mut r, opts.z_range.unwrap_or([0.0, 0.0]));
    let gamma = uniform(&mut r, opts.gamma_range);
    (Draw { replace, z, gamma }, r)
}

fn check_range(name: &str, [lo, hi]: [f64; 2]) -> Result<()> {
    if (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi {
        Ok(())
    } else {
        Err(PipelineError::BadSchema(format!("{name} [{lo}, {hi}] must be a sub-interval of [0, 1]")))
    }
}

/// Write an augmented copy of `manifest` to `out_dir`.
///
/// Each training entry is independently replaced, with probability `p_aug`, by
/// its hallucination at `z ~ U(z_range)`, `γ ~ U(γ_range)`. Other splits and
/// labels are copied unchanged. `prior` supplies the geometric prior of an entry.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    mut prior: impl FnMut(&ManifestEntry, &Image) -> Result<GeometricPrior>,
    bundle: &TranslatorBundle,
    opts: &AugmentOptions,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&opts.p_aug) {
        return Err(PipelineError::BadSchema(format!("p_aug = {} outside [0, 1]", opts.p_aug)));
    }
    check_range("gamma_range", opts.gamma_range)?;
    if let Some(z) = opts.z_range {
        check_range("z_range", z)?;
        if bundle.vae.is_none() {
            return Err(localdom_core::Error::MissingVae.into());
        }
    }
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let (d, mut r) = draw(opts, &e.id);
        let replace = d.replace && e.split == Split::Train;
        let src = manifest.image_path(e);
        let (bytes, provenance) = if replace {
            let image = Image::load_png(&src)?;
            let p = prior(e, &image)?;
            let params = opts.z_range.map(|_| ZGamma { z: d.z, gamma: d.gamma });
            let out = hallucinate(bundle, &image, &p, params, Sampling::Stochastic(&mut r))?;
            let prov = Provenance {
                replaced: true,
                z: params.map(|p| p.z),
                gamma: params.map(|p| p.gamma),
                source_id: e.id.clone(),
            };
            (out.image.encode_png()?, prov)
        } else {
            let prov = Provenance {
                replaced: false,
                z: None,
                gamma: None,
                source_id: e.id.clone(),
            };
            (read_bytes(&src)?, prov)
        };
        let image_rel = format!("images/{}.png", e.id);
        write_atomic(&out_dir.join(&image_rel), &bytes)?;
        let label = match manifest.label_path(e) {
            Some(path) => {
                let ext = path.extension().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
                let rel = format!("labels/{}.{ext}", e.id);
                write_atomic(&out_dir.join(&rel), &read_bytes(&path)?)?;
                Some(rel)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: e.id.clone(),
            image: image_rel,
            label,
            split: e.split,
            sha256: sha256_hex(&bytes),
            label_sha256: e.label_sha256.clone(),
            provenance: Some(provenance),
        });
    }
    let out = DatasetManifest {
        schema_version: MANIFEST_SCHEMA,
        prior_rule: manifest.prior_rule.clone(),
        entries,
        root: out_dir.to_path_buf(),
    };
    out.save(&out_dir.join("manifest.json"))?;
    Ok(out)
}
