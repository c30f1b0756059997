//! JSON artifact persistence and content hashing.
//!
//! Every stage output embeds the SHA-256 of the files it was derived from,
//! so downstream stages can detect stale inputs before using them.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `load_json` that reports which pipeline stage must produce the file.
pub fn load_stage_json<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            stage: stage.to_string(),
            path: path.to_path_buf(),
        });
    }
    load_json(path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        // Standard test vector for "abc".
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn json_round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        let value = vec![0.1f64, -2.5e-13, 7.0];
        save_json(&path, &value).unwrap();
        let first = fs::read(&path).unwrap();
        let loaded: Vec<f64> = load_json(&path).unwrap();
        assert_eq!(loaded, value);
        save_json(&path, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }
}
