//! Persisted artifacts. Text files open with a `# config_hash=<hex>` line and
//! JSON files wrap their payload as `{"config_hash": ..., "body": ...}`;
//! readers reject files written under a different config.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{IceError, Result};

const HASH_PREFIX: &str = "# config_hash=";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| IceError::io(dir, e))?;
    }
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| IceError::io(path, e))
}

fn mismatch(path: &Path, expected: &str, found: &str) -> IceError {
    IceError::ConfigHashMismatch {
        path: path.to_path_buf(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// Writes `body` below the hash line.
pub fn write_text(path: &Path, hash: &str, body: &str) -> Result<()> {
    write_bytes(path, format!("{HASH_PREFIX}{hash}\n{body}").as_bytes())
}

/// Body of a text artifact after checking its hash line.
pub fn read_text(path: &Path, expected_hash: &str) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| IceError::io(path, e))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let found = first
        .strip_prefix(HASH_PREFIX)
        .ok_or_else(|| IceError::parse(path.display().to_string(), "missing config hash line"))?;
    if found != expected_hash {
        return Err(mismatch(path, expected_hash, found));
    }
    Ok(body.to_string())
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    config_hash: String,
    body: Value,
}

fn to_value(json: &str) -> Result<Value> {
    serde_json::from_str(json).map_err(|e| IceError::Serde(e.to_string()))
}

/// Wraps an already serialized JSON document.
pub fn write_json_str(path: &Path, hash: &str, json: &str) -> Result<()> {
    let env = Envelope {
        config_hash: hash.to_string(),
        body: to_value(json)?,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| IceError::Serde(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, hash: &str, value: &T) -> Result<()> {
    let json = serde_json::to_string(value).map_err(|e| IceError::Serde(e.to_string()))?;
    write_json_str(path, hash, &json)
}

/// The payload of a JSON artifact as a JSON string.
pub fn read_json_str(path: &Path, expected_hash: &str) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| IceError::io(path, e))?;
    let env: Envelope = serde_json::from_str(&text)
        .map_err(|e| IceError::parse(path.display().to_string(), e.to_string()))?;
    if env.config_hash != expected_hash {
        return Err(mismatch(path, expected_hash, &env.config_hash));
    }
    serde_json::to_string(&env.body).map_err(|e| IceError::Serde(e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, expected_hash: &str) -> Result<T> {
    let body = read_json_str(path, expected_hash)?;
    serde_json::from_str(&body).map_err(|e| IceError::parse(path.display().to_string(), e.to_string()))
}

/// Writes a file that carries no hash of its own, such as the config copy.
pub fn write_plain(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.tsv");
        write_text(&p, "abc", "x\ty\n").unwrap();
        assert_eq!(read_text(&p, "abc").unwrap(), "x\ty\n");
        assert!(matches!(read_text(&p, "abd"), Err(IceError::ConfigHashMismatch { .. })));
        write_plain(&p, "no header\n").unwrap();
        assert!(read_text(&p, "abc").is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        let v = vec![0.1f64, 1.0 / 3.0, 1e-300, -2.5e17];
        write_json(&p, "h", &v).unwrap();
        let back: Vec<f64> = read_json(&p, "h").unwrap();
        assert_eq!(
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(read_json::<Vec<f64>>(&p, "g").is_err());
    }
}
