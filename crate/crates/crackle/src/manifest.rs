//! Run manifest: what produced an output directory and digests of every
//! file written into it.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub tool_version: String,
    pub constants_version: u32,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, started_unix: u64) -> Self {
        Self {
            command: command.into(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            constants_version: crackle_core::limits::CONSTANTS_VERSION,
            started_unix,
            finished_unix: started_unix,
            files: Vec::new(),
        }
    }

    /// Records `name` (relative to `dir`) with its current digest.
    pub fn add(&mut self, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.into(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = now_unix();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))
    }

    /// Files whose digest no longer matches.
    pub fn stale(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| std::fs::read(dir.join(&f.path)).map_or(true, |b| sha256_hex(&b) != f.sha256))
            .map(|f| f.path.clone())
            .collect()
    }
}
