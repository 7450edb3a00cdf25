use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// checkpoint, log, metrics, assignments, embeddings, figure
    pub kind: String,
    pub sha256: String,
}

/// Index of every file a run produced, keyed by path relative to the output
/// directory. Contains no timestamps so reruns compare equal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Option<RunConfig>,
    pub files: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(format!("reading {}", path.display()), e)),
        }
    }

    /// Write `bytes` to `dir/name` and record its hash.
    pub fn write(&mut self, dir: &Path, name: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        self.files.insert(
            name.to_string(),
            ManifestEntry {
                kind: kind.to_string(),
                sha256: sha256_hex(bytes),
            },
        );
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Names whose on-disk content no longer matches the recorded hash.
    pub fn stale(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(name, e)| fs::read(dir.join(name)).map(|b| sha256_hex(&b) != e.sha256).unwrap_or(true))
            .map(|(name, _)| name.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn write_save_reload_and_detect_changes() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::load_or_default(dir.path()).unwrap();
        m.config = Some(RunConfig::default());
        m.write(dir.path(), "a.txt", "log", b"hello").unwrap();
        m.save(dir.path()).unwrap();
        let back = Manifest::load_or_default(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(back.stale(dir.path()).is_empty());
        fs::write(dir.path().join("a.txt"), b"changed").unwrap();
        assert_eq!(back.stale(dir.path()), vec!["a.txt".to_string()]);
    }
}
