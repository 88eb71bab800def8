//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `BSCK`                              |
//! | 2     | format version (1)                        |
//! | 2     | reserved, zero                            |
//! | 4     | header length `H`                         |
//! | H     | UTF-8 JSON header                         |
//! | ...   | `f32` payload, tensors in header order    |
//!
//! The header holds the model configuration, training metadata and the
//! tensor table (`name`, `shape`, `trainable`). Every store entry is saved,
//! including running batch statistics and input normalisation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Real;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BSCK";
pub const CHECKPOINT_VERSION: u16 = 1;
const PREAMBLE: usize = 12;

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingMeta {
    pub epoch: Option<usize>,
    pub fold: Option<usize>,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub val_mse: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: TrainingMeta,
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, meta: &TrainingMeta) -> Result<Vec<u8>> {
    let store = model.store();
    let header = Header {
        config: model.config().clone(),
        meta: meta.clone(),
        tensors: store
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out =
        Vec::with_capacity(PREAMBLE + json.len() + 4 * store.iter().map(|(_, p)| p.tensor.len()).sum::<usize>());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREAMBLE || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(PREAMBLE..PREAMBLE + hlen)
        .ok_or_else(|| Error::Format("checkpoint truncated inside header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut model = Model::<f32>::new(header.config)?;
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let payload = &bytes[PREAMBLE + hlen..];
    if payload.len() != 4 * expected {
        return Err(Error::Format(format!(
            "checkpoint payload is {} bytes, header describes {}",
            payload.len(),
            4 * expected
        )));
    }
    if header.tensors.len() != model.store().len() {
        return Err(Error::Integrity(format!(
            "checkpoint has {} tensors, configuration builds {}",
            header.tensors.len(),
            model.store().len()
        )));
    }
    let mut at = 0;
    for entry in &header.tensors {
        let id = model
            .store()
            .id(&entry.name)
            .ok_or_else(|| Error::Integrity(format!("tensor `{}` is not part of the configured model", entry.name)))?;
        let p = model.store_mut().get_mut(id);
        if p.tensor.shape() != entry.shape.as_slice() || p.trainable != entry.trainable {
            return Err(Error::Integrity(format!(
                "tensor `{}` is {:?} in the file but {:?} in the configured model",
                entry.name,
                entry.shape,
                p.tensor.shape()
            )));
        }
        for v in p.tensor.data_mut() {
            *v = f32::from_le_bytes(payload[at..at + 4].try_into().expect("4 bytes"));
            at += 4;
        }
    }
    Ok(Checkpoint {
        model,
        meta: header.meta,
    })
}

pub fn write_checkpoint<T: Real>(path: impl AsRef<Path>, model: &Model<T>, meta: &TrainingMeta) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, save_checkpoint(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    load_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
