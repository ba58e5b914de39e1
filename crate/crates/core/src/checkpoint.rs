//! Self-describing checkpoint files: named tensors plus a JSON metadata
//! block with the format version, the full config and all seeds.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Tensor};
use safetensors::{Dtype, SafeTensors, View};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "accomp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "accomp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    /// What the tensors describe, e.g. `vae` or `dit`.
    pub kind: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            config,
            seeds: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }
}

struct Raw {
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl View for &Raw {
    fn dtype(&self) -> Dtype {
        self.dtype
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn data(&self) -> std::borrow::Cow<'_, [u8]> {
        (&self.bytes[..]).into()
    }
    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

fn to_raw(t: &Tensor) -> Result<Raw> {
    let flat = t.flatten_all()?;
    let (dtype, bytes) = match t.dtype() {
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        _ => (Dtype::F32, flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
    };
    Ok(Raw { dtype, shape: t.dims().to_vec(), bytes })
}

fn ckpt_err(path: &Path, detail: impl ToString) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), detail: detail.to_string() }
}

/// Writes atomically: a sibling temp file is renamed into place.
pub fn save(path: impl AsRef<Path>, meta: &CheckpointMeta, tensors: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    let raws: Vec<(String, Raw)> = tensors.iter().map(|(k, t)| Ok((k.clone(), to_raw(t)?))).collect::<Result<_>>()?;
    // a single metadata entry keeps the header byte-stable
    let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    let bytes = safetensors::serialize(raws.iter().map(|(k, r)| (k.as_str(), r)), Some(info))
        .map_err(|e| ckpt_err(path, e))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(CheckpointMeta, BTreeMap<String, Tensor>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt_err(path, e))?;
    let meta_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| ckpt_err(path, "missing metadata block"))?;
    let meta: CheckpointMeta = serde_json::from_str(meta_json).map_err(|e| ckpt_err(path, e))?;
    if meta.format != CHECKPOINT_FORMAT || meta.version != CHECKPOINT_VERSION {
        return Err(ckpt_err(path, format!("unsupported format {} v{}", meta.format, meta.version)));
    }
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let data = view.data();
        let t = match view.dtype() {
            Dtype::F32 => {
                let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, view.shape(), &crate::nn::device())?
            }
            Dtype::F64 => {
                let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, view.shape(), &crate::nn::device())?
            }
            other => return Err(ckpt_err(path, format!("tensor `{name}` has unsupported dtype {other:?}"))),
        };
        tensors.insert(name, t);
    }
    Ok((meta, tensors))
}

/// Hex sha256 of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let dev = crate::nn::device();
        let tensors = vec![
            ("b".to_string(), Tensor::new(&[[1f32, 2.], [3., 4.]], &dev).unwrap()),
            ("a".to_string(), Tensor::new(&[0.5f64], &dev).unwrap()),
        ];
        let mut meta = CheckpointMeta::new("test", serde_json::json!({"k": 1, "z": [1, 2]}));
        meta.seeds.insert("init".into(), 7);
        meta.extra.insert("x".into(), "y".into());
        let p1 = dir.path().join("one.safetensors");
        let p2 = dir.path().join("two.safetensors");
        save(&p1, &meta, &tensors).unwrap();
        save(&p2, &meta, &tensors).unwrap();
        assert_eq!(file_hash(&p1).unwrap(), file_hash(&p2).unwrap());
        let (m, t) = load(&p1).unwrap();
        assert_eq!(m, meta);
        assert_eq!(t["b"].to_vec2::<f32>().unwrap(), vec![vec![1., 2.], vec![3., 4.]]);
        assert_eq!(t["a"].to_vec1::<f64>().unwrap(), vec![0.5]);
    }

    #[test]
    fn garbage_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(matches!(load(&p), Err(Error::Checkpoint { .. })));
    }
}
