//! Run manifests: resolved config plus sha256 of every input and output.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "hyperpretrain-run/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub command: String,
    /// Complete resolved config as dotted keys.
    pub config: BTreeMap<String, Value>,
    /// Input file label → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory → sha256.
    pub outputs: BTreeMap<String, String>,
    /// Command-specific records such as dropped patients.
    pub notes: BTreeMap<String, Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(command: &str, config: BTreeMap<String, Value>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, label: String, path: &Path) -> Result<()> {
        self.inputs.insert(label, hash_file(path)?);
        Ok(())
    }

    /// Hashes `relative` as written under `out`.
    pub fn add_output(&mut self, out: &Path, relative: &str) -> Result<()> {
        self.outputs.insert(relative.to_string(), hash_file(&out.join(relative))?);
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(out.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).map_err(hyperpretrain::Error::from)?;
        if m.format != MANIFEST_FORMAT {
            bail!(hyperpretrain::Error::Invalid(format!("unsupported manifest format {:?}", m.format)));
        }
        Ok(m)
    }

    /// Differences between two hash tables, as `label: recorded → found`.
    pub fn diff(recorded: &BTreeMap<String, String>, found: &BTreeMap<String, String>) -> Vec<String> {
        let mut keys: Vec<&String> = recorded.keys().chain(found.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .filter(|k| recorded.get(*k) != found.get(*k))
            .map(|k| format!("{k}: {} -> {}", recorded.get(k).map_or("absent", String::as_str), found.get(k).map_or("absent", String::as_str)))
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
    fn diff_lists_changed_and_missing_entries() {
        let a: BTreeMap<String, String> = [("x".into(), "1".into()), ("y".into(), "2".into())].into();
        let b: BTreeMap<String, String> = [("x".into(), "1".into()), ("z".into(), "3".into())].into();
        assert_eq!(Manifest::diff(&a, &b), vec!["y: 2 -> absent".to_string(), "z: absent -> 3".to_string()]);
        assert!(Manifest::diff(&a, &a).is_empty());
    }
}
