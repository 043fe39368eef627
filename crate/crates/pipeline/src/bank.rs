//! Extracted patch pools persisted as a checkpoint archive.

use localdom_core::archive::Archive;
use localdom_core::patches::{MaskPatch, MaskPatchSet, Patch, PatchSet};
use localdom_core::priors::LocalDomainId;
use localdom_core::{Image, Mask};
use localdom_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::{PipelineError, Result};

/// Patch pools of one extraction run. `edits[i]` holds β-indicator crops taken
/// at the centres of the α pool of the same size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchBank {
    pub pools: Vec<(PatchSet, MaskPatchSet)>,
    pub edits: Vec<MaskPatchSet>,
}

#[derive(Serialize, Deserialize)]
struct PoolIndex {
    domain: LocalDomainId,
    size: usize,
    image_ids: Vec<String>,
    centers: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct BankIndex {
    pools: Vec<PoolIndex>,
    edits: Vec<PoolIndex>,
}

fn index(m: &MaskPatchSet) -> PoolIndex {
    PoolIndex {
        domain: m.domain,
        size: m.size,
        image_ids: m.masks().iter().map(|p| p.image_id.clone()).collect(),
        centers: m.masks().iter().map(|p| p.center).collect(),
    }
}

fn mask_tensor(m: &MaskPatchSet) -> Tensor {
    let s = m.size;
    let data = m.masks().iter().flat_map(|p| p.pixels.data().iter().copied()).collect();
    Tensor::from_vec(&[m.len(), 1, s, s], data)
}

fn masks_from(t: &Tensor, ix: &PoolIndex) -> Result<MaskPatchSet> {
    let s = ix.size;
    let mut set = MaskPatchSet::new(ix.domain, s);
    for (i, (id, &center)) in ix.image_ids.iter().zip(&ix.centers).enumerate() {
        let data = t.data()[i * s * s..(i + 1) * s * s].to_vec();
        set.push(MaskPatch {
            pixels: Mask::from_vec(s, s, data)?,
            center,
            image_id: id.clone(),
            domain: ix.domain,
        })?;
    }
    Ok(set)
}

fn blob<'a>(a: &'a Archive, name: &str, n: usize, size: usize) -> Result<&'a Tensor> {
    let t = a
        .blobs
        .iter()
        .find(|(b, _)| b == name)
        .map(|(_, t)| t)
        .ok_or_else(|| PipelineError::BadSchema(format!("patch archive lacks `{name}`")))?;
    let sh = t.shape();
    if sh.len() != 4 || sh[0] != n || sh[2] != size || sh[3] != size {
        return Err(PipelineError::BadSchema(format!("patch blob `{name}` has shape {sh:?}")));
    }
    Ok(t)
}

impl PatchBank {
    pub fn pools_of(&self, domain: LocalDomainId) -> Vec<(PatchSet, MaskPatchSet)> {
        self.pools.iter().filter(|(p, _)| p.domain == domain).cloned().collect()
    }

    pub fn to_archive(&self) -> Archive {
        let meta = BankIndex {
            pools: self.pools.iter().map(|(_, m)| index(m)).collect(),
            edits: self.edits.iter().map(index).collect(),
        };
        let mut a = Archive::new("patches", serde_json::to_value(meta).expect("serializable"));
        for (k, (p, m)) in self.pools.iter().enumerate() {
            let imgs: Vec<&Image> = p.patches().iter().map(|x| &x.pixels).collect();
            let t = if imgs.is_empty() {
                Tensor::zeros(&[0, 1, p.size, p.size])
            } else {
                Image::batch_to_tensor(&imgs)
            };
            a.blobs.push((format!("pool{k}/pixels"), t));
            a.blobs.push((format!("pool{k}/masks"), mask_tensor(m)));
        }
        for (k, m) in self.edits.iter().enumerate() {
            a.blobs.push((format!("edit{k}/masks"), mask_tensor(m)));
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != "patches" {
            return Err(PipelineError::BadSchema(format!("expected a patch archive, found `{}`", a.kind)));
        }
        let ix: BankIndex =
            serde_json::from_value(a.meta.clone()).map_err(|e| PipelineError::BadSchema(format!("patch index: {e}")))?;
        let mut bank = PatchBank::default();
        for (k, pi) in ix.pools.iter().enumerate() {
            let n = pi.centers.len();
            let pixels = blob(a, &format!("pool{k}/pixels"), n, pi.size)?;
            let masks = masks_from(blob(a, &format!("pool{k}/masks"), n, pi.size)?, pi)?;
            let mut set = PatchSet::new(pi.domain, pi.size);
            for (i, m) in masks.masks().iter().enumerate() {
                set.push(Patch {
                    pixels: Image::from_tensor(pixels, i),
                    center: m.center,
                    image_id: m.image_id.clone(),
                    domain: pi.domain,
                })?;
            }
            bank.pools.push((set, masks));
        }
        for (k, ei) in ix.edits.iter().enumerate() {
            bank.edits.push(masks_from(blob(a, &format!("edit{k}/masks"), ei.centers.len(), ei.size)?, ei)?);
        }
        Ok(bank)
    }
}
