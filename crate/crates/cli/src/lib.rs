#![allow(clippy::type_complexity)]

//! IO companion to `offres-core`: CFL-style file formats, trajectory and
//! checkpoint persistence, corpus building with manifests, metric sweeps,
//! and the JSON configuration consumed by the `offres` binary.

pub mod cfl;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod sweep;
pub mod trajfile;

use std::path::Path;

#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("core: {0}")]
    Core(#[from] offres_core::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("config: {pointer}: {msg}")]
    Config { pointer: String, msg: String },
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn format_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Format(msg.to_string())
}

/// Create the parent directory of a file path if needed.
pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Write a text file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text)?;
    Ok(())
}
