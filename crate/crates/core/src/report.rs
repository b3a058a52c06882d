//! Artifact writers: full-precision CSV numbers, JSON reports and the
//! hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// 17 significant digits, `.` decimal separator.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub config_hash: String,
    pub seed: u64,
}

/// Collects every artifact written during a run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Manifest {
    #[serde(skip)]
    root: PathBuf,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, config_hash: String, seed: u64) -> Self {
        Self {
            root: root.into(),
            config_hash,
            seed,
            artifacts: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Write `bytes` under the output directory and record the file.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.artifacts.push(ManifestEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Write `manifest.json` itself (not listed inside).
    pub fn finish(&self) -> Result<PathBuf> {
        let path = self.root.join("manifest.json");
        fs::create_dir_all(&self.root)?;
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn manifest_lists_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new(dir.path(), "abc".into(), 7);
        m.write("a/b.csv", b"x\n1\n").unwrap();
        m.write_json("r.json", &serde_json::json!({"k": 1}))
            .unwrap();
        m.finish().unwrap();
        assert_eq!(m.artifacts.len(), 2);
        assert_eq!(m.artifacts[0].sha256, sha256_hex(b"x\n1\n"));
        assert!(dir.path().join("manifest.json").exists());
    }
}
