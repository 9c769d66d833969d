//! Run orchestration: config, manifest, stage gating and artifact layout.

pub mod config;
pub mod manifest;
pub mod stages;

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use stages::{stage_dependencies, StageContext, STAGE_ORDER};

use std::path::Path;

use crate::error::Result;

/// Writes to a temp file in the destination directory then renames into
/// place, so partially written artifacts are never observable.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
