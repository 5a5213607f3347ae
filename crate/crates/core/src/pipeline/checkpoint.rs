//! Container: 8-byte magic, u64 little-endian manifest length, JSON
//! manifest, then f32 little-endian tensor data at manifest offsets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::diff::{ParamStore, Tensor};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SACNERF1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    Magic,
    #[error("checkpoint version {0} is not supported (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("tensor {name}: {why}")]
    Tensor { name: String, why: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    /// Element count.
    pub len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    kind: String,
    config: Value,
    tensors: Vec<TensorEntry>,
}

/// A decoded checkpoint: what it holds, the run config, and named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_store<T: Real>(kind: &str, config: Value, store: &ParamStore<T>) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            tensors: store
                .named_values()
                .into_iter()
                .map(|(n, t)| (n, t.cast::<f32>()))
                .collect(),
        }
    }

    /// Rebuilds a store in checkpoint order.
    pub fn to_store<T: Real>(&self) -> ParamStore<T> {
        let mut s = ParamStore::new();
        for (n, t) in &self.tensors {
            s.add(n.clone(), t.cast());
        }
        s
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut offset = 0;
    let entries: Vec<TensorEntry> = ck
        .tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            };
            offset += 4 * t.len();
            e
        })
        .collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        kind: ck.kind.clone(),
        config: ck.config.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &ck.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Validates everything before building any tensor, so a bad file never
/// yields a partial load.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic);
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated("missing manifest length".into()));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if mlen > body.len() as u64 {
        return Err(CheckpointError::Truncated(format!(
            "manifest declares {mlen} bytes, {} available",
            body.len()
        )));
    }
    let (json, payload) = body.split_at(mlen as usize);
    let probe: Value = serde_json::from_slice(json).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let version = probe.get("version").and_then(Value::as_u64);
    match version {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => return Err(CheckpointError::Version(v as u32)),
        None => return Err(CheckpointError::Manifest("missing version".into())),
    }
    let m: Manifest = serde_json::from_value(probe).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut expected = 0usize;
    for e in &m.tensors {
        let bad = |why: String| CheckpointError::Tensor {
            name: e.name.clone(),
            why,
        };
        let count: usize = e.shape.iter().product();
        if count != e.len {
            return Err(bad(format!("shape {:?} holds {count} values, manifest says {}", e.shape, e.len)));
        }
        if e.offset != expected {
            return Err(bad(format!("offset {} but previous tensors end at {expected}", e.offset)));
        }
        expected += 4 * e.len;
    }
    if payload.len() != expected {
        return Err(CheckpointError::Truncated(format!(
            "payload holds {} bytes, manifest declares {expected}",
            payload.len()
        )));
    }
    let tensors = m
        .tensors
        .iter()
        .map(|e| {
            let data = payload[e.offset..e.offset + 4 * e.len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&e.shape, data).map_err(|err| CheckpointError::Tensor {
                name: e.name.clone(),
                why: err.to_string(),
            })?;
            Ok((e.name.clone(), t))
        })
        .collect::<Result<_, CheckpointError>>()?;
    Ok(Checkpoint {
        kind: m.kind,
        config: m.config,
        tensors,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, encode_checkpoint(ck)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
