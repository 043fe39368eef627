//! Hashing, atomic writes and the read audit used by the training stages.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{PipelineError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a sibling temporary file and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            PipelineError::MissingFile(path.to_path_buf())
        } else {
            PipelineError::io(path, e)
        }
    })
}

/// Records every file a stage reads and, when restricted, rejects anything
/// outside the allowed set.
#[derive(Debug)]
pub struct AccessAudit {
    stage: String,
    allowed: Option<BTreeSet<PathBuf>>,
    /// Directories whose contents are always readable (upstream artifacts).
    allowed_dirs: Vec<PathBuf>,
    reads: BTreeSet<PathBuf>,
}

impl AccessAudit {
    pub fn unrestricted(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            allowed: None,
            allowed_dirs: Vec::new(),
            reads: BTreeSet::new(),
        }
    }

    pub fn restricted(stage: &str, files: impl IntoIterator<Item = PathBuf>, dirs: Vec<PathBuf>) -> Self {
        Self {
            stage: stage.into(),
            allowed: Some(files.into_iter().map(|p| normalize(&p)).collect()),
            allowed_dirs: dirs.iter().map(|d| normalize(d)).collect(),
            reads: BTreeSet::new(),
        }
    }

    pub fn check(&mut self, path: &Path) -> Result<()> {
        let p = normalize(path);
        if let Some(allowed) = &self.allowed {
            if !allowed.contains(&p) && !self.allowed_dirs.iter().any(|d| p.starts_with(d)) {
                return Err(PipelineError::SourceOnlyViolation {
                    stage: self.stage.clone(),
                    path: p,
                });
            }
        }
        self.reads.insert(p);
        Ok(())
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        self.check(path)?;
        read_bytes(path)
    }

    pub fn reads(&self) -> &BTreeSet<PathBuf> {
        &self.reads
    }
}

/// Lexical normalisation (no symlink resolution) so audit comparisons are
/// stable for paths that do not exist yet.
pub fn normalize(path: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

/// `path` relative to `base` when it lies below it, else unchanged.
pub fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let (p, b) = (normalize(path), normalize(base));
    p.strip_prefix(&b).map(Path::to_path_buf).unwrap_or(p)
}
