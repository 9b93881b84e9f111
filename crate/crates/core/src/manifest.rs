//! Per-run manifest with output checksums.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub seed: Option<u64>,
    /// Effective configuration, one `key=value` per line.
    pub config: Option<String>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn begin(command: Vec<String>, seed: Option<u64>, config: Option<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seed,
            config,
            started: timestamp(),
            finished: String::new(),
            outputs: Vec::new(),
        }
    }

    /// Checksums the named files in `dir` and writes the manifest atomically.
    pub fn finish(mut self, dir: &Path, files: &[&str]) -> Result<Self> {
        self.outputs = files
            .iter()
            .map(|f| {
                let (sha256, bytes) = sha256_file(&dir.join(f))?;
                Ok(OutputFile {
                    file: f.to_string(),
                    sha256,
                    bytes,
                })
            })
            .collect::<Result<_>>()?;
        self.finished = timestamp();
        crate::io::write_json(&dir.join(MANIFEST_FILE), &self)?;
        Ok(self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        crate::io::read_json(&dir.join(MANIFEST_FILE))
    }

    /// Files whose current checksum differs from the recorded one, with a reason.
    pub fn verify(&self, dir: &Path) -> Vec<(String, String)> {
        self.outputs
            .iter()
            .filter_map(|o| match sha256_file(&dir.join(&o.file)) {
                Ok((sha, _)) if sha == o.sha256 => None,
                Ok((sha, _)) => Some((o.file.clone(), format!("sha256 {sha}, manifest says {}", o.sha256))),
                Err(e) => Some((o.file.clone(), e.to_string())),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.bin"), b"payload").unwrap();
        fs::write(dir.path().join("b.txt"), b"text").unwrap();
        let m = RunManifest::begin(vec!["x".into()], Some(1), None)
            .finish(dir.path(), &["a.bin", "b.txt"])
            .unwrap();
        let loaded = RunManifest::load(dir.path()).unwrap();
        assert_eq!(loaded, m);
        assert!(loaded.verify(dir.path()).is_empty());
        // sha256("payload")
        assert_eq!(
            m.outputs[0].sha256,
            "239f59ed55e737c77147cf55ad0c1b030b6d7ee748a7426952f9b852d5a935e5"
        );
        fs::write(dir.path().join("a.bin"), b"payloaD").unwrap();
        let bad = loaded.verify(dir.path());
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].0, "a.bin");
        fs::remove_file(dir.path().join("b.txt")).unwrap();
        assert_eq!(loaded.verify(dir.path()).len(), 2);
    }
}
