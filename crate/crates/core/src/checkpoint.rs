//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"HYPTYCKP"
//! 8       4     u32 format version (currently 1)
//! 12      8     u64 header length H
//! 20      H     UTF-8 JSON header
//! 20+H    8·N   f64 payload, tensors back to back in header order
//! end-32  32    SHA-256 of every preceding byte
//! ```
//!
//! The header holds the model and optimizer configs, label inventory,
//! vocabulary, optimizer step, free-form metadata and the tensor directory.
//! Each directory entry gives `name`, `role` (`param`, `words`, `adam_m`,
//! `adam_v`), `manifold`, `rows`, `cols` and `offset` (in f64 units from the
//! start of the payload).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::Matrix;
use crate::data::{LabelInventory, Vocab};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::{AdamConfig, Moments, OptimizerState};
use crate::params::{Manifold, ParamStore};

pub const MAGIC: &[u8; 8] = b"HYPTYCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub adam: AdamConfig,
    pub inventory: LabelInventory,
    pub vocab: Vocab,
    /// Frozen word table in the encoder's space.
    pub words: Matrix,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    Words,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: Role,
    manifold: Manifold,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    adam: AdamConfig,
    inventory: LabelInventory,
    vocab: Vocab,
    step: u64,
    meta: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        let mut push = |name: &str, role, manifold, rows, cols, data: &[f64]| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                role,
                manifold,
                rows,
                cols,
                offset: payload.len(),
            });
            payload.extend_from_slice(data);
        };
        push("words", Role::Words, Manifold::Euclidean, self.words.rows(), self.words.cols(), self.words.data());
        for (_, p) in self.params.iter() {
            push(&p.name, Role::Param, p.manifold, p.rows, p.cols, &p.data);
        }
        if !self.optimizer.moments.is_empty() {
            if self.optimizer.moments.len() != self.params.len() {
                return Err(bad("optimizer moments do not match the parameters"));
            }
            for ((_, p), mom) in self.params.iter().zip(&self.optimizer.moments) {
                if mom.m.len() != p.data.len() || mom.v.len() != p.data.len() {
                    return Err(bad(format!("moments of `{}` have the wrong size", p.name)));
                }
                push(&p.name, Role::AdamM, p.manifold, p.rows, p.cols, &mom.m);
                push(&p.name, Role::AdamV, p.manifold, p.rows, p.cols, &mom.v);
            }
        }
        let header = Header {
            config: self.config.clone(),
            adam: self.adam,
            inventory: self.inventory.clone(),
            vocab: self.vocab.clone(),
            step: self.optimizer.step,
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;

        let mut out = Vec::with_capacity(20 + json.len() + 8 * payload.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 + 32 {
            return Err(bad("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupted file)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let rest = &body[20..];
        if hlen > rest.len() {
            return Err(bad("header length exceeds file"));
        }
        let header: Header = serde_json::from_slice(&rest[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
        let raw = &rest[hlen..];
        if raw.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let payload: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

        let mut words = None;
        let mut params = ParamStore::new();
        let mut ms = Vec::new();
        let mut vs = Vec::new();
        for t in &header.tensors {
            let len = t.rows * t.cols;
            let data = payload
                .get(t.offset..t.offset + len)
                .ok_or_else(|| bad(format!("tensor `{}` lies outside the payload", t.name)))?
                .to_vec();
            match t.role {
                Role::Words => words = Some(Matrix::new(t.rows, t.cols, data)),
                Role::Param => {
                    params.add(t.name.clone(), t.manifold, t.rows, t.cols, data);
                }
                Role::AdamM => ms.push(data),
                Role::AdamV => vs.push(data),
            }
        }
        let words = words.ok_or_else(|| bad("missing word table"))?;
        if ms.len() != vs.len() || (!ms.is_empty() && ms.len() != params.len()) {
            return Err(bad("optimizer moments do not match the parameters"));
        }
        let moments = ms.into_iter().zip(vs).map(|(m, v)| Moments { m, v }).collect();
        Ok(Self {
            config: header.config,
            adam: header.adam,
            inventory: header.inventory,
            vocab: header.vocab,
            words,
            params,
            optimizer: OptimizerState {
                step: header.step,
                moments,
            },
            meta: header.meta,
        })
    }

    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Replaces `path` with `contents` so readers see either the old file or
/// the complete new one.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
