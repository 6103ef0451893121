//! On-disk formats: binary tensors, sample and dataset directories,
//! checkpoints, run configuration and graymap figures.

mod checkpoint;
mod config;
mod figure;
mod sample;
mod tensor_file;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{Paths, RunConfig};
pub use figure::{error_pgm, magnitude_pgm, pgm_level, ERROR_SCALE};
pub use sample::{load_dataset, load_sample, save_dataset, save_sample};
pub use tensor_file::{decode_tensor, encode_tensor, read_tensor, write_tensor, DType, MAGIC, VERSION};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: e.span().map_or(0, |s| s.start as u64),
        message: e.message().to_string(),
    })
}

pub(crate) fn to_toml<T: serde::Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::config(format!("cannot serialize: {e}")))
}
