//! Optional metric back-ends selected through `$LOCALDOM_CACHE/backends.json`.
//!
//! The file maps metric names to built-in back-ends, for example
//! `{"fid": "color_stats", "lpips": "multiscale_l2"}`. Without it the registry
//! stays empty and those metrics are reported as unavailable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use localdom_core::eval::{ColorStatsFeatures, MetricRegistry, MultiscaleL2, PixelL2};

use crate::fsutil::read_bytes;
use crate::{PipelineError, Result};

pub const CACHE_ENV: &str = "LOCALDOM_CACHE";

pub fn backends_file() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(|d| Path::new(&d).join("backends.json"))
}

/// Registry built from `path` (if it exists) plus the raw selection, which
/// feeds the evaluate stage's input hash.
pub fn load_registry(path: Option<&Path>) -> Result<(MetricRegistry, BTreeMap<String, String>)> {
    let mut reg = MetricRegistry::new();
    let Some(path) = path.filter(|p| p.exists()) else {
        return Ok((reg, BTreeMap::new()));
    };
    let sel: BTreeMap<String, String> = serde_json::from_slice(&read_bytes(path)?).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    for (metric, backend) in &sel {
        match (metric.as_str(), backend.as_str()) {
            ("fid", "color_stats") => reg.register_fid(Box::new(ColorStatsFeatures)),
            ("lpips", "multiscale_l2") => reg.register_lpips(Box::new(MultiscaleL2::default())),
            ("lpips", "pixel_l2") => reg.register_lpips(Box::new(PixelL2)),
            _ => {
                return Err(PipelineError::BadSchema(format!(
                    "{}: unknown back-end `{backend}` for `{metric}`",
                    path.display()
                )))
            }
        }
    }
    Ok((reg, sel))
}
