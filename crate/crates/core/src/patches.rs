//! Mask-guided patch sampling and extraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};
use crate::priors::{indicator_mask, GeometricPrior, LocalDomainId};
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    /// Side of the square patch in pixels.
    pub size: usize,
    /// Patches drawn per image and domain.
    pub per_image: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PatchSpec {
    pub fn new(size: usize, per_image: usize, seed: u64) -> Self {
        Self { size, per_image, seed }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.size == 0 || self.per_image == 0 {
            return Err(Error::Config(format!("patch spec {self:?} needs size ≥ 1 and per_image ≥ 1")));
        }
        if self.size > height.min(width) {
            return Err(Error::Config(format!(
                "patch size {} exceeds image {height}x{width}",
                self.size
            )));
        }
        Ok(())
    }

    /// Top-left offset of a patch centred at `center`.
    pub fn origin(&self, center: (usize, usize)) -> (usize, usize) {
        let half = self.size / 2;
        (center.0 - half, center.1 - half)
    }
}

/// Inclusive range of valid centre coordinates along an axis of length `len`:
/// a margin of `size / 2` on both sides, which keeps the whole crop in-bounds.
pub fn center_range(len: usize, size: usize) -> Option<(usize, usize)> {
    let half = size / 2;
    if len < 2 * half + 1 || size > len {
        return None;
    }
    Some((half, len - 1 - half))
}

/// Every positive pixel of `indicator` usable as a patch centre, in row-major order.
pub fn valid_centers(indicator: &Mask, size: usize) -> Vec<(usize, usize)> {
    let (h, w) = indicator.dims();
    let (Some((r0, r1)), Some((c0, c1))) = (center_range(h, size), center_range(w, size)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            if indicator.get(r, c) > 0.5 {
                out.push((r, c));
            }
        }
    }
    out
}

/// Uniform sampling with replacement over the valid positive pixels.
pub fn sample_patch_centers(indicator: &Mask, spec: &PatchSpec, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    let candidates = valid_centers(indicator, spec.size);
    if candidates.is_empty() {
        return Err(Error::EmptyDomain(0));
    }
    Ok((0..spec.per_image)
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub pixels: Image,
    pub center: (usize, usize),
    pub image_id: String,
    pub domain: LocalDomainId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPatch {
    pub pixels: Mask,
    pub center: (usize, usize),
    pub image_id: String,
    pub domain: LocalDomainId,
}

/// Patches of one size and one local domain (`𝒳_d`).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub domain: LocalDomainId,
    pub size: usize,
    patches: Vec<Patch>,
}

/// Mask patches aligned with a [`PatchSet`] (`𝒫_d`).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPatchSet {
    pub domain: LocalDomainId,
    pub size: usize,
    masks: Vec<MaskPatch>,
}

impl PatchSet {
    pub fn new(domain: LocalDomainId, size: usize) -> Self {
        Self {
            domain,
            size,
            patches: Vec::new(),
        }
    }

    pub fn push(&mut self, p: Patch) -> Result<()> {
        if p.domain != self.domain || p.pixels.dims() != (self.size, self.size) {
            return Err(Error::ShapeMismatch(format!(
                "patch {:?}/domain {} does not fit set of size {} domain {}",
                p.pixels.dims(),
                p.domain,
                self.size,
                self.domain
            )));
        }
        self.patches.push(p);
        Ok(())
    }

    pub fn extend(&mut self, other: PatchSet) -> Result<()> {
        for p in other.patches {
            self.push(p)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn get(&self, i: usize) -> &Patch {
        &self.patches[i]
    }

    pub fn channels(&self) -> Option<usize> {
        self.patches.first().map(|p| p.pixels.channels())
    }
}

impl MaskPatchSet {
    pub fn new(domain: LocalDomainId, size: usize) -> Self {
        Self {
            domain,
            size,
            masks: Vec::new(),
        }
    }

    pub fn push(&mut self, m: MaskPatch) -> Result<()> {
        if m.pixels.dims() != (self.size, self.size) {
            return Err(Error::ShapeMismatch(format!(
                "mask patch {:?} does not fit set of size {}",
                m.pixels.dims(),
                self.size
            )));
        }
        self.masks.push(m);
        Ok(())
    }

    pub fn extend(&mut self, other: MaskPatchSet) -> Result<()> {
        for m in other.masks {
            self.push(m)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[MaskPatch] {
        &self.masks
    }

    pub fn get(&self, i: usize) -> &MaskPatch {
        &self.masks[i]
    }
}

/// RNG stream for one `(spec, image, domain)` extraction.
pub fn extraction_rng(spec: &PatchSpec, image_id: &str, domain: LocalDomainId) -> rng::Rng {
    rng::stream(spec.seed, &format!("patches/{image_id}/{domain}/{}", spec.size))
}

/// Crop `spec.per_image` patches of domain `d` and the matching indicator crops.
pub fn extract_patches(
    image: &Image,
    image_id: &str,
    prior: &GeometricPrior,
    d: LocalDomainId,
    spec: &PatchSpec,
) -> Result<(PatchSet, MaskPatchSet)> {
    if image.dims() != prior.dims() {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} vs prior {:?}",
            image.dims(),
            prior.dims()
        )));
    }
    spec.validate(image.height(), image.width())?;
    let indicator = indicator_mask(prior, d)?;
    let mut rng = extraction_rng(spec, image_id, d);
    let centers = sample_patch_centers(&indicator, spec, &mut rng).map_err(|_| Error::EmptyDomain(d))?;
    crop_at(image, &indicator, image_id, d, spec.size, &centers)
}

/// Crop image and mask patches at explicit centres.
pub fn crop_at(
    image: &Image,
    mask: &Mask,
    image_id: &str,
    d: LocalDomainId,
    size: usize,
    centers: &[(usize, usize)],
) -> Result<(PatchSet, MaskPatchSet)> {
    let mut patches = PatchSet::new(d, size);
    let mut masks = MaskPatchSet::new(d, size);
    let half = size / 2;
    for &center in centers {
        let (top, left) = (center.0 - half, center.1 - half);
        patches.push(Patch {
            pixels: image.crop(top, left, size, size),
            center,
            image_id: image_id.to_string(),
            domain: d,
        })?;
        masks.push(MaskPatch {
            pixels: mask.crop(top, left, size, size),
            center,
            image_id: image_id.to_string(),
            domain: d,
        })?;
    }
    Ok((patches, masks))
}
