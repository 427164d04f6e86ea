//! Binary checkpoint format.
//!
//! ```text
//! "MTEC"  version:u8  header_len:u64 LE  header (UTF-8 JSON)  payload
//! ```
//!
//! The header maps each tensor name to `{shape, offset}` (byte offset into
//! the payload) and holds run metadata under `__meta__`. The payload is the
//! concatenation of all tensors as little-endian f64 in header order.
//! Optimizer moments are stored as `optim/m/<name>` and `optim/v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::tokenizer::Vocab;
use crate::encoder::{EncoderModel, ModelConfig};

use super::optim::{AdamW, Moments, OptimizerState};

pub const MAGIC: &[u8; 4] = b"MTEC";
pub const VERSION: u8 = 1;
const PREFIX_LEN: usize = 4 + 1 + 8;
const M_PREFIX: &str = "optim/m/";
const V_PREFIX: &str = "optim/v/";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u8),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub vocab: Vocab,
    pub optimizer: Option<OptimizerState>,
    /// Optimizer steps taken over all stages so far.
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimMeta {
    config: AdamW,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: ModelConfig,
    vocab: Vocab,
    stage_completed: u8,
    step: u64,
    seed: u64,
    optimizer: Option<OptimMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(rename = "__meta__")]
    meta: Meta,
    #[serde(flatten)]
    tensors: BTreeMap<String, Entry>,
}

/// JSON metadata written next to a checkpoint as `<path>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub stage_completed: u8,
    pub seed: u64,
    pub config: ModelConfig,
    pub step: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Serializes a checkpoint to bytes.
pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut tensors: BTreeMap<String, &Tensor> = ck.model.named_tensors();
    let mut optim_tensors: Vec<(String, Tensor)> = Vec::new();
    if let Some(opt) = &ck.optimizer {
        for (name, mom) in &opt.moments {
            let shape = ck
                .model
                .parameter(name)
                .map(|t| t.shape().to_vec())
                .unwrap_or_else(|| vec![mom.m.len()]);
            optim_tensors.push((
                format!("{M_PREFIX}{name}"),
                Tensor::from_parts(shape.clone(), mom.m.clone()),
            ));
            optim_tensors.push((
                format!("{V_PREFIX}{name}"),
                Tensor::from_parts(shape, mom.v.clone()),
            ));
        }
    }
    for (name, t) in &optim_tensors {
        tensors.insert(name.clone(), t);
    }
    let mut entries = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in &tensors {
        entries.insert(
            name.clone(),
            Entry {
                shape: t.shape().to_vec(),
                offset,
            },
        );
        offset += 8 * t.numel() as u64;
    }
    let header = Header {
        meta: Meta {
            config: ck.model.config().clone(),
            vocab: ck.vocab.clone(),
            stage_completed: ck.model.stage_completed,
            step: ck.step,
            seed: ck.seed,
            optimizer: ck.optimizer.as_ref().map(|o| OptimMeta {
                config: o.config,
                step: o.step,
            }),
        },
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses checkpoint bytes; any inconsistency is an error and nothing partial is returned.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated("missing magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < PREFIX_LEN {
        return Err(CheckpointError::Truncated("missing header length".into()));
    }
    if bytes[4] != VERSION {
        return Err(CheckpointError::UnsupportedVersion(bytes[4]));
    }
    let header_len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let rest = &bytes[PREFIX_LEN..];
    if header_len > rest.len() as u64 {
        return Err(CheckpointError::Truncated(format!(
            "header of {header_len} bytes, {} available",
            rest.len()
        )));
    }
    let (head, payload) = rest.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(head)
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;

    // entries must tile the payload exactly, in order
    let mut by_offset: Vec<(&String, &Entry)> = header.tensors.iter().collect();
    by_offset.sort_by_key(|(_, e)| e.offset);
    let mut expected = 0u64;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, e) in by_offset {
        if e.offset != expected {
            return Err(CheckpointError::Corrupt(format!(
                "{name}: offset {} expected {expected}",
                e.offset
            )));
        }
        let numel = e
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .and_then(|n| n.checked_mul(8).map(|_| n))
            .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: shape overflows")))?;
        let end = e
            .offset
            .checked_add(numel * 8)
            .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: size overflows")))?;
        if end > payload.len() as u64 {
            return Err(CheckpointError::Truncated(format!(
                "{name} ends at byte {end}, payload has {}",
                payload.len()
            )));
        }
        let data: Vec<f64> = payload[e.offset as usize..end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data)
            .map_err(|err| CheckpointError::Corrupt(format!("{name}: {err}")))?;
        tensors.insert(name.clone(), t);
        expected = end;
    }
    if expected != payload.len() as u64 {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing payload bytes",
            payload.len() as u64 - expected
        )));
    }

    let meta = header.meta;
    if meta.config.vocab_size < meta.vocab.len() {
        return Err(CheckpointError::Corrupt(format!(
            "vocabulary of {} exceeds vocab_size {}",
            meta.vocab.len(),
            meta.config.vocab_size
        )));
    }
    let mut moments_m = BTreeMap::new();
    let mut moments_v = BTreeMap::new();
    let mut params = BTreeMap::new();
    for (name, t) in tensors {
        if let Some(p) = name.strip_prefix(M_PREFIX) {
            moments_m.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix(V_PREFIX) {
            moments_v.insert(p.to_string(), t);
        } else {
            params.insert(name, t);
        }
    }
    let model = EncoderModel::from_parts(meta.config, params, meta.stage_completed)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let optimizer = match meta.optimizer {
        None => {
            if !moments_m.is_empty() || !moments_v.is_empty() {
                return Err(CheckpointError::Corrupt(
                    "optimizer moments without optimizer metadata".into(),
                ));
            }
            None
        }
        Some(om) => {
            if moments_m.keys().ne(moments_v.keys()) {
                return Err(CheckpointError::Corrupt(
                    "first and second moments name different parameters".into(),
                ));
            }
            let mut moments = BTreeMap::new();
            for (name, m) in moments_m {
                let v = moments_v.remove(&name).expect("same keys");
                match model.parameter(&name) {
                    Some(p) if p.shape() == m.shape() && p.shape() == v.shape() => {}
                    _ => {
                        return Err(CheckpointError::Corrupt(format!(
                            "moments for unknown parameter {name}"
                        )))
                    }
                }
                moments.insert(
                    name,
                    Moments {
                        m: m.into_data(),
                        v: v.into_data(),
                    },
                );
            }
            Some(OptimizerState {
                config: om.config,
                step: om.step,
                moments,
            })
        }
    };
    Ok(Checkpoint {
        model,
        vocab: meta.vocab,
        optimizer,
        step: meta.step,
        seed: meta.seed,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes the checkpoint and its `.meta.json` sidecar, each atomically.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &write_checkpoint(ck))?;
    let sidecar = Sidecar {
        stage_completed: ck.model.stage_completed,
        seed: ck.seed,
        config: ck.model.config().clone(),
        step: ck.step,
    };
    let mut json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    json.push(b'\n');
    write_atomic(&sidecar_path(path), &json)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    read_checkpoint(&bytes)
}
