//! Dataset manifests: image/label paths, splits and per-file checksums.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fsutil::{sha256_hex, write_json_atomic, AccessAudit};
use crate::{PipelineError, Result};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// How an augmented entry came about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub replaced: bool,
    pub z: Option<f64>,
    pub gamma: Option<f64>,
    /// Id of the entry this one was derived from.
    pub source_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub image: String,
    #[serde(default)]
    pub label: Option<String>,
    pub split: Split,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub prior_rule: Option<String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory the entry paths are relative to.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn image_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.image)
    }

    pub fn label_path(&self, e: &ManifestEntry) -> Option<PathBuf> {
        e.label.as_ref().map(|l| self.root.join(l))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    /// Structural checks that need no file access.
    pub fn validate_schema(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA {
            return Err(PipelineError::BadSchema(format!(
                "manifest schema_version {} (expected {MANIFEST_SCHEMA})",
                self.schema_version
            )));
        }
        let mut ids = BTreeSet::new();
        let mut images = BTreeSet::new();
        for e in &self.entries {
            if e.id.is_empty() || e.image.is_empty() {
                return Err(PipelineError::BadSchema("entry with empty id or image".into()));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(PipelineError::BadSchema(format!("duplicate id `{}`", e.id)));
            }
            if !images.insert(crate::fsutil::normalize(Path::new(&e.image))) {
                return Err(PipelineError::BadSchema(format!("image `{}` listed more than once", e.image)));
            }
            if e.label.is_some() != e.label_sha256.is_some() {
                return Err(PipelineError::BadSchema(format!("entry `{}`: label and label_sha256 go together", e.id)));
            }
        }
        Ok(())
    }
}

fn verify(path: &Path, expected: &str, audit: &mut AccessAudit) -> Result<()> {
    let bytes = audit.read(path)?;
    let actual = sha256_hex(&bytes);
    if actual != expected.to_ascii_lowercase() {
        return Err(PipelineError::ChecksumMismatch {
            path: path.to_path_buf(),
            expected: expected.into(),
            actual,
        });
    }
    Ok(())
}

fn parse(path: &Path, audit: &mut AccessAudit) -> Result<DatasetManifest> {
    let bytes = audit.read(path)?;
    let mut m: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| PipelineError::BadSchema(format!("{}: {e}", path.display())))?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate_schema()?;
    m.entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(m)
}

/// Load, validate and checksum every file; entries come back sorted by id.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest_audited(path, None, &mut AccessAudit::unrestricted("load"))
}

/// Like [`load_manifest`] but only touches files of `only` (all splits when
/// `None`), reading through `audit`.
pub fn load_manifest_audited(path: &Path, only: Option<Split>, audit: &mut AccessAudit) -> Result<DatasetManifest> {
    let m = parse(path, audit)?;
    for e in &m.entries {
        if only.is_some_and(|s| s != e.split) {
            continue;
        }
        verify(&m.image_path(e), &e.sha256, audit)?;
        if let (Some(label), Some(sha)) = (m.label_path(e), &e.label_sha256) {
            verify(&label, sha, audit)?;
        }
    }
    Ok(m)
}
