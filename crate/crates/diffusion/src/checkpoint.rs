//! Versioned binary checkpoint: magic, version, JSON header, little-endian
//! f32 tensor data, SHA-256 trailer.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::Model;
use crate::params::ParamStore;
use crate::schedule::ScheduleConfig;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"IMTRDIFF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checksum mismatch")]
    Checksum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: Model,
    schedule: ScheduleConfig,
    config_hash: String,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub schedule: ScheduleConfig,
    /// Hash of the training configuration and data that produced it.
    pub config_hash: String,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            schedule: self.schedule.clone(),
            config_hash: self.config_hash.clone(),
            tensors: (0..self.params.len())
                .map(|i| TensorHeader {
                    name: self.params.name(i).to_owned(),
                    shape: self.params.get(i).shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for i in 0..self.params.len() {
            for v in self.params.get(i).data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Checksum);
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| CheckpointError::Format("header length".into()))?;
        let header: Header =
            serde_json::from_slice(&body[20..hend]).map_err(|e| CheckpointError::Format(format!("header: {e}")))?;
        let mut params = ParamStore::new();
        let mut off = hend;
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            let end = off + 4 * n;
            if end > body.len() {
                return Err(CheckpointError::Format(format!("truncated tensor {}", t.name)));
            }
            let data = body[off..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.add(t.name.clone(), Tensor::from_vec(&t.shape, data));
            off = end;
        }
        if off != body.len() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        // validate the layout against a freshly built model
        let (_, mut fresh) = Model::new::<f32>(header.model.config.clone())
            .map_err(|e| CheckpointError::Format(format!("model config: {e}")))?;
        fresh.load_from(&params).map_err(CheckpointError::Format)?;
        if fresh.names() != params.names() {
            return Err(CheckpointError::Format("parameter layout differs from model".into()));
        }
        Ok(Self {
            model: header.model,
            schedule: header.schedule,
            config_hash: header.config_hash,
            params: fresh,
        })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small() -> Checkpoint {
        let (model, params) = Model::new::<f32>(ModelConfig {
            canvas: (32, 32),
            ..Default::default()
        })
        .unwrap();
        Checkpoint {
            model,
            schedule: ScheduleConfig::default(),
            config_hash: "abc".into(),
            params,
        }
    }

    #[test]
    fn round_trip() {
        let c = small();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corruption_is_detected() {
        let mut b = small().to_bytes();
        let mid = b.len() / 2;
        b[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::Checksum)));
        let mut v = small().to_bytes();
        v[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Version(9))));
        assert!(matches!(
            Checkpoint::from_bytes(b"nope"),
            Err(CheckpointError::Format(_))
        ));
    }
}
