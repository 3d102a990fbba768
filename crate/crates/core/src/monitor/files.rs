//! Content-addressed artifact store.
//!
//! Multimodal payloads are written once under `<run_dir>/artifacts` and
//! travel between agents as `file://` URLs only.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Overrides the run directory (artifacts and logs).
pub const RUN_DIR_ENV: &str = "AGENTMESH_RUN_DIR";

/// `$AGENTMESH_RUN_DIR`, or `default` when unset.
pub fn run_dir_from_env(default: impl Into<PathBuf>) -> PathBuf {
    match std::env::var_os(RUN_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => default.into(),
    }
}

#[derive(Debug, Clone)]
pub struct FileManager {
    run_dir: PathBuf,
}

impl FileManager {
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        Self { run_dir: run_dir.into() }
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn artifact_dir(&self) -> PathBuf {
        self.run_dir.join("artifacts")
    }

    /// Stores `bytes` as `<sha256>.<ext>` and returns its `file://` URL.
    /// Identical bytes map to the same file; existing files are never
    /// rewritten.
    pub fn save_artifact(&self, bytes: &[u8], suggested_extension: &str) -> Result<String> {
        let dir = self.artifact_dir();
        std::fs::create_dir_all(&dir)?;
        let digest = hex::encode(Sha256::digest(bytes));
        let ext = suggested_extension.trim_start_matches('.');
        let file_name = if ext.is_empty() {
            digest
        } else {
            format!("{digest}.{ext}")
        };
        let path = dir.join(file_name);
        if !path.exists() {
            let tmp = dir.join(format!(".{}.tmp", std::process::id()));
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, &path)?;
        }
        let abs = std::fs::canonicalize(&path)?;
        Ok(format!("file://{}", abs.display()))
    }

    /// Reads a `file://` URL (or plain path) back.
    pub fn load_artifact(&self, url: &str) -> Result<Vec<u8>> {
        load_url(url)
    }
}

/// Fetches the bytes behind a message URL on demand.
pub fn load_url(url: &str) -> Result<Vec<u8>> {
    if let Some(path) = url.strip_prefix("file://") {
        return Ok(std::fs::read(path)?);
    }
    if url.starts_with("http://") || url.starts_with("https://") {
        let mut resp = ureq::get(url).call().map_err(|e| Error::Accessibility {
            attempts: 1,
            cause: format!("GET {url}: {e}"),
        })?;
        return resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| Error::Accessibility {
                attempts: 1,
                cause: format!("GET {url}: {e}"),
            });
    }
    Ok(std::fs::read(url)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::Msg;

    #[test]
    fn dedup_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let fm = FileManager::new(dir.path());
        let a = fm.save_artifact(b"pixels", "png").unwrap();
        let b = fm.save_artifact(b"pixels", ".png").unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("file://"));
        assert_eq!(std::fs::read_dir(fm.artifact_dir()).unwrap().count(), 1);
        assert_eq!(fm.load_artifact(&a).unwrap(), b"pixels");
        let c = fm.save_artifact(b"other", "png").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn message_size_is_independent_of_artifact_size() {
        let dir = tempfile::tempdir().unwrap();
        let fm = FileManager::new(dir.path());
        let big = vec![7u8; 1 << 20];
        let url = fm.save_artifact(&big, "bin").unwrap();
        let m = Msg::builder("painter", "here it is").url(url).build().unwrap();
        assert!(m.to_json().len() < 2048);
    }
}
