//! Parameter checkpoints: a JSON manifest plus a little-endian `f64` blob.
//!
//! The manifest lists parameter names and shapes in store order; the blob
//! holds their values back to back in the same order. Values are always
//! stored as `f64`, which round-trips `f32` and `f64` stores exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Real;

pub const CHECKPOINT_FORMAT: &str = "hyperpretrain-checkpoint/1";
pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const BLOB_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    /// Element type of the model that wrote the checkpoint.
    pub dtype: String,
    pub parameters: Vec<ParameterEntry>,
    /// Model-specific data such as the encoder config and node vocabulary.
    pub metadata: serde_json::Value,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), message: message.into() }
}

pub fn encode_blob<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(store.parameter_count() * 8);
    for p in store.iter() {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    bytes
}

/// Writes `checkpoint.json` and `checkpoint.bin` into `dir`.
pub fn save_checkpoint<T: Real>(dir: &Path, store: &ParamStore<T>, metadata: serde_json::Value) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        dtype: T::dtype_name().to_string(),
        parameters: store.iter().map(|p| ParameterEntry { name: p.name.clone(), shape: p.value.shape() }).collect(),
        metadata,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(dir.join(BLOB_FILE), encode_blob(store))?;
    Ok(manifest_path)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| ckpt_err(&path, e.to_string()))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(ckpt_err(&path, format!("unsupported format {:?}", manifest.format)));
    }
    Ok(manifest)
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<(ParamStore<T>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(BLOB_FILE);
    let bytes = fs::read(&blob_path).map_err(|e| ckpt_err(&blob_path, e.to_string()))?;
    let expected: usize = manifest.parameters.iter().map(|p| p.shape[0] * p.shape[1] * 8).sum();
    if bytes.len() != expected {
        return Err(ckpt_err(&blob_path, format!("blob has {} bytes, manifest expects {expected}", bytes.len())));
    }
    let mut store = ParamStore::new();
    let mut chunks = bytes.chunks_exact(8);
    for entry in &manifest.parameters {
        let n = entry.shape[0] * entry.shape[1];
        let data: Vec<T> = chunks
            .by_ref()
            .take(n)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        store.register(entry.name.clone(), Tensor::from_vec(entry.shape[0], entry.shape[1], data)?)?;
    }
    Ok((store, manifest))
}
