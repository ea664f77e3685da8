//! Images, checkpoints, configuration files and atomic file output.

mod checkpoint;
mod config;
mod image;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub use checkpoint::{
    decode_words, encode_words, from_checkpoint, load_checkpoint, to_checkpoint, save_checkpoint, Checkpoint, CheckpointError, NamedTensor,
    TrainingState, FORMAT_VERSION, MAGIC,
};
pub use config::{parse_config, render_config, ConfigMap};
pub use image::{load_image, save_gray_u8, save_image, ImageError};

/// Write `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never observes a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::Invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
