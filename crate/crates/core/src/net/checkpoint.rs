//! Checkpoint file: `GMLCKPT1`, format version, a JSON block with the
//! configuration, normalisation and training metadata, then parameters and
//! Adam state as little-endian f64, and a trailing CRC-32 of everything
//! before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::{BackboneConfig, Model, ModelParams};
use super::norm::NormStats;
use super::train::{LossRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::prob::Family;

pub const MAGIC: &[u8; 8] = b"GMLCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub family: Family,
    pub fold: usize,
    pub epoch: usize,
    pub loss_history: Vec<LossRecord>,
    /// Excerpts held out from this fold's training data.
    pub validation_excerpts: Vec<String>,
    pub train_config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BackboneConfig,
    pub params: ModelParams,
    pub norm: NormStats,
    pub meta: TrainingMeta,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    backbone: BackboneConfig,
    init_seed: u64,
    norm: NormStats,
    meta: TrainingMeta,
}

impl Checkpoint {
    pub fn model(&self) -> Model {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
            norm: self.norm.clone(),
            family: self.meta.family,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            backbone: self.config.clone(),
            init_seed: self.params.seed,
            norm: self.norm.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serialises");
        let n = self.params.len();
        let mut out = Vec::with_capacity(64 + json.len() + 8 * 3 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let put = |out: &mut Vec<u8>, v: &[f64]| {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        put(&mut out, &self.params.values);
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());
        put(&mut out, &self.optimizer.m);
        put(&mut out, &self.optimizer.v);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("CRC mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8).ok_or_else(|| corrupt("truncated"))? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32().ok_or_else(|| corrupt("truncated"))?;
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let json_len = r.u64().ok_or_else(|| corrupt("truncated"))? as usize;
        let json = r.take(json_len).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| corrupt(&format!("header: {e}")))?;
        let values = r.f64s().ok_or_else(|| corrupt("truncated parameters"))?;
        let step = r.u64().ok_or_else(|| corrupt("truncated optimizer state"))?;
        let m = r.f64s().ok_or_else(|| corrupt("truncated optimizer state"))?;
        let v = r.f64s().ok_or_else(|| corrupt("truncated optimizer state"))?;
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        if values.len() != header.backbone.param_count() || m.len() != values.len() || v.len() != values.len() {
            return Err(corrupt("parameter count does not match the configuration"));
        }
        Ok(Checkpoint {
            config: header.backbone,
            params: ModelParams {
                values,
                seed: header.init_seed,
            },
            norm: header.norm,
            meta: header.meta,
            optimizer: AdamState { m, v, step },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::harness::write_atomic(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64s(&mut self) -> Option<Vec<f64>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n.checked_mul(8)?)?;
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        )
    }
}
