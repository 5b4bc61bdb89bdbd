//! Persistence: checkpoints, text formats, PNG images, run configs and
//! scene bundles. Every write goes through a temporary file in the target
//! directory and a rename, so readers never see a partial file.

mod bundle;
mod checkpoint;
mod config;
mod png;
mod text;

pub use bundle::{load_bundle, save_bundle, BundleFrame, SceneBundle, SceneInfo, BUNDLE_VERSION};
pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::{InitConfig, RunConfig, CONFIG_VERSION};
pub use png::{load_png, save_png};
pub use text::{
    format_cameras, format_poses, format_skeleton, format_template, load_cameras, load_poses, load_template, parse_cameras,
    parse_poses, parse_skeleton, parse_template, save_cameras, save_poses, save_template, CameraRecord,
};

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to `path` atomically, creating parent directories.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.bin");
        atomic_write(&p, b"first").unwrap();
        atomic_write(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
