//! Run manifests and atomic file writes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use spikedd::{json_hash, Error, Result};

/// Record of one artifact-producing command, written beside its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub engine_version: &'static str,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub parallel_build: bool,
    pub started_at: String,
    pub finished_at: String,
}

fn now() -> String {
    OffsetDateTime::now_utc().format(&Rfc3339).unwrap_or_default()
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            engine_version: env!("CARGO_PKG_VERSION"),
            config_hash: json_hash(&config),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            threads: None,
            deterministic: false,
            parallel_build: spikedd::par::is_parallel_enabled(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_at = now();
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        write_atomic(path, |tmp| {
            fs::write(tmp, &text).map_err(|e| Error::Io {
                path: tmp.to_path_buf(),
                source: e,
            })
        })
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Lets `write` fill a temporary file next to `path`, then renames it into
/// place. The temporary file is removed if writing fails.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let tmp = tmp_path(path);
    if let Err(e) = write(&tmp) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
