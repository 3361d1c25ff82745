//! Checkpoint files.
//!
//! Layout: the 8-byte magic `S2GCKPT1`, a little-endian `u64` header length,
//! a JSON header, then every parameter's values as little-endian `f64` in
//! header order.
//!
//! ```json
//! {"params": [{"name": "enc.embed", "shape": [120, 128]}, ...],
//!  "step": 1500, "seed": 7, "meta": {...}}
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::param::ParamStore;

const MAGIC: &[u8; 8] = b"S2GCKPT1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint data is truncated")]
    Truncated,
    #[error("parameter `{name}` has shape {got:?} in the checkpoint but {expected:?} in the model")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("parameter `{0}` is missing from the checkpoint")]
    MissingParam(String),
    #[error("checkpoint has parameter `{0}` unknown to the model")]
    UnknownParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub params: Vec<ParamHeader>,
    pub step: u64,
    pub seed: u64,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// A parsed checkpoint: header plus one value array per parameter.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, seed: u64, meta: serde_json::Value) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| ParamHeader {
                name: p.name.clone(),
                shape: [p.rows, p.cols],
            })
            .collect();
        let values = store.iter().map(|(_, p)| p.value.clone()).collect();
        Checkpoint {
            header: CheckpointHeader {
                params,
                step: store.step(),
                seed,
                meta,
            },
            values,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for vals in &self.values {
            let mut buf = Vec::with_capacity(vals.len() * 8);
            for v in vals {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or(CheckpointError::Truncated)?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let mut offset = 16 + hlen;
        let mut values = Vec::with_capacity(header.params.len());
        for p in &header.params {
            let n = p.shape[0] * p.shape[1];
            let chunk = bytes
                .get(offset..offset + 8 * n)
                .ok_or(CheckpointError::Truncated)?;
            values.push(
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
            );
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(Checkpoint { header, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Copies values into `store`, which must hold exactly the same named
    /// parameters with the same shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        for p in &self.header.params {
            if store.id(&p.name).is_none() {
                return Err(CheckpointError::UnknownParam(p.name.clone()));
            }
        }
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let (name, expected) = {
                let p = store.get(id);
                (p.name.clone(), (p.rows, p.cols))
            };
            let k = self
                .header
                .params
                .iter()
                .position(|h| h.name == name)
                .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
            let got = (self.header.params[k].shape[0], self.header.params[k].shape[1]);
            if got != expected {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected,
                    got,
                });
            }
            store.get_mut(id).value.copy_from_slice(&self.values[k]);
        }
        store.set_step(self.header.step);
        Ok(())
    }
}
