//! Parameter checkpoints: a directory holding `manifest.json` (name ->
//! shape, dtype, byte offset) and `params.bin` (all tensors as
//! little-endian `f32`, concatenated in manifest order).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, StedError};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "sted-params-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: [usize; 4],
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    /// Free-form configuration the parameters were trained with.
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, TensorEntry>,
}

/// Hex SHA-256 of the JSON encoding of `cfg`.
pub fn config_hash<S: Serialize>(cfg: &S) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_params<T: Real>(dir: &Path, store: &ParamStore<T>, config: serde_json::Value, hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(store.numel() * 4);
    let mut tensors = BTreeMap::new();
    for (name, t) in store.iter() {
        tensors.insert(
            name.clone(),
            TensorEntry {
                shape: t.shape(),
                dtype: "f32".into(),
                offset: blob.len(),
            },
        );
        for v in t.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        config_hash: hash.to_string(),
        config,
        tensors,
    };
    fs::write(dir.join(BLOB_FILE), blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| StedError::format(format!("checkpoint manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(StedError::format(format!("unknown checkpoint format {:?}", m.format)));
    }
    Ok(m)
}

pub fn read_params(dir: &Path) -> Result<ParamStore<f32>> {
    let m = read_manifest(dir)?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let mut store = ParamStore::new();
    let mut expected = 0usize;
    for (name, e) in &m.tensors {
        if e.dtype != "f32" {
            return Err(StedError::format(format!("{name}: unsupported dtype {}", e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        let bytes = blob
            .get(e.offset..end)
            .ok_or_else(|| StedError::format(format!("{name}: blob too short")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name.clone(), Tensor::from_vec(e.shape, data)?);
        expected += 4 * n;
    }
    if expected != blob.len() {
        return Err(StedError::format(format!("blob holds {} bytes, manifest describes {expected}", blob.len())));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamStore::<f32>::new();
        p.insert("a.weight", Tensor::from_fn([2, 1, 3, 3], |i, _, y, x| (i * 9 + y * 3 + x) as f32 * 0.37));
        p.insert("a.bias", Tensor::full([1, 2, 1, 1], -1.5));
        write_params(dir.path(), &p, serde_json::json!({"k": 1}), "abc").unwrap();
        assert_eq!(read_params(dir.path()).unwrap(), p);
        assert_eq!(read_manifest(dir.path()).unwrap().config_hash, "abc");
        let blob = dir.path().join(BLOB_FILE);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_params(dir.path()), Err(StedError::Format(_))));
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash(&serde_json::json!({"a": 1})).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&serde_json::json!({"a": 1})).unwrap());
        assert_ne!(h, config_hash(&serde_json::json!({"a": 2})).unwrap());
    }
}
