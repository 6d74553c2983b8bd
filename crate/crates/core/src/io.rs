//! Artifact persistence: atomic writes, config-hash stamping and stage manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const HASH_PREFIX: &str = "# config_hash: ";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a sibling temp file and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Read an artifact produced by an upstream stage, naming that stage when it is absent.
pub fn read_upstream(path: &Path, stage: &str) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingStage { stage: stage.to_string(), path: path.to_path_buf() });
    }
    read_text(path)
}

/// Prefix delimited text with a `# config_hash:` comment line.
pub fn stamp_csv(hash: &str, body: &str) -> String {
    format!("{HASH_PREFIX}{hash}\n{body}")
}

/// The hash from a stamped file's first line.
pub fn csv_hash(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix(HASH_PREFIX).map(str::trim)
}

/// Fail unless every hash equals the first one.
pub fn check_hashes<'a>(items: impl IntoIterator<Item = (String, &'a str)>) -> Result<()> {
    let mut first: Option<(String, &str)> = None;
    for (what, hash) in items {
        match &first {
            None => first = Some((what, hash)),
            Some((w0, h0)) if *h0 != hash => {
                return Err(Error::invalid(format!(
                    "artifacts come from different configurations: {w0} has {h0}, {what} has {hash} (rerun the stages or pass --force)"
                )));
            }
            Some(_) => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

impl InputRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(InputRecord { path: path.display().to_string(), sha256: sha256_hex(&read_bytes(path)?) })
    }
}

/// Written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub model_format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub stage_seed: u64,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str, seed: u64) -> Self {
        Manifest {
            stage: stage.to_string(),
            version: VERSION.to_string(),
            model_format_version: crate::neural::MODEL_FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            stage_seed: crate::seed::derive(seed, stage),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputRecord::of(path)?);
        Ok(())
    }

    /// Write `bytes` atomically and record the file as an output.
    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn output_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.output(path, text.as_bytes())
    }

    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, &self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn stamped_csv_round_trip() {
        let text = stamp_csv("abc123", "id,x\n1,2\n");
        assert_eq!(csv_hash(&text), Some("abc123"));
        assert_eq!(csv_hash("id,x\n"), None);
    }

    #[test]
    fn mixed_hashes_rejected() {
        assert!(check_hashes([("a".to_string(), "h1"), ("b".to_string(), "h1")]).is_ok());
        let err = check_hashes([("a".to_string(), "h1"), ("b".to_string(), "h2")]).unwrap_err();
        assert!(err.to_string().contains("--force"));
    }

    #[test]
    fn missing_upstream_names_stage() {
        let err = read_upstream(Path::new("/nonexistent/x.csv"), "synth").unwrap_err();
        assert!(matches!(err, Error::MissingStage { ref stage, .. } if stage == "synth"));
        assert!(err.is_validation());
    }

    #[test]
    fn digest_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
