//! Encoding of text records and the two embedding output formats: JSONL
//! lines `{"id","vec"}` and a binary tensor file for bulk use.
//!
//! Binary layout: magic `MTEV`, version byte, u64 LE header length, a JSON
//! header `{"ids":[...],"dim":d}`, then `ids.len() * d` little-endian f64s in
//! row order.

use serde::{Deserialize, Serialize};

use crate::data::TextRecord;
use crate::evaluation::Embedder;
use crate::task::TaskKind;
use crate::trainer::Checkpoint;

use super::PipelineError;

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"MTEV";
pub const EMBEDDINGS_VERSION: u8 = 1;
const PREAMBLE: usize = 4 + 1 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    pub vec: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    ids: Vec<String>,
    dim: usize,
}

/// Embeds every record through `task`'s adapter. A passage request on a
/// model with only the query adapter uses that shared adapter.
pub fn encode_records(
    ck: &Checkpoint,
    records: &[TextRecord],
    task: Option<TaskKind>,
    dim: usize,
    instructions: bool,
) -> Result<Vec<Embedding>, PipelineError> {
    let adapter = match task {
        Some(TaskKind::RetrievalPassage)
            if ck.model.adapter(TaskKind::RetrievalPassage).is_none() =>
        {
            Some(TaskKind::RetrievalQuery)
        }
        t => t,
    };
    if let Some(a) = adapter {
        if ck.model.adapter(a).is_none() {
            return Err(PipelineError::Usage(format!(
                "the model has no {a} adapter"
            )));
        }
    }
    let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    let emb = Embedder::new(&ck.model, &ck.vocab, dim, instructions);
    let vecs = emb.embed_as(&texts, adapter, task)?;
    Ok(records
        .iter()
        .zip(vecs)
        .map(|(r, vec)| Embedding {
            id: r.id.clone(),
            vec,
        })
        .collect())
}

pub fn write_embeddings_binary(rows: &[Embedding]) -> Vec<u8> {
    let dim = rows.first().map_or(0, |r| r.vec.len());
    let header = Header {
        ids: rows.iter().map(|r| r.id.clone()).collect(),
        dim,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + rows.len() * dim * 8);
    out.extend_from_slice(EMBEDDINGS_MAGIC);
    out.push(EMBEDDINGS_VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for r in rows {
        assert_eq!(r.vec.len(), dim, "embeddings must share one dim");
        for v in &r.vec {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmbeddingsError {
    #[error("not an embeddings file")]
    BadMagic,
    #[error("unsupported embeddings version {0}")]
    UnsupportedVersion(u8),
    #[error("embeddings file is malformed: {0}")]
    Malformed(String),
}

pub fn read_embeddings_binary(bytes: &[u8]) -> Result<Vec<Embedding>, EmbeddingsError> {
    let bad = |m: &str| EmbeddingsError::Malformed(m.to_string());
    if bytes.len() < PREAMBLE || &bytes[..4] != EMBEDDINGS_MAGIC {
        return Err(EmbeddingsError::BadMagic);
    }
    if bytes[4] != EMBEDDINGS_VERSION {
        return Err(EmbeddingsError::UnsupportedVersion(bytes[4]));
    }
    let len = u64::from_le_bytes(bytes[5..PREAMBLE].try_into().expect("8 bytes"));
    let body = &bytes[PREAMBLE..];
    let len = usize::try_from(len)
        .ok()
        .filter(|&l| l <= body.len())
        .ok_or_else(|| bad("header overruns file"))?;
    let header: Header = serde_json::from_slice(&body[..len])
        .map_err(|e| EmbeddingsError::Malformed(e.to_string()))?;
    let payload = &body[len..];
    let expected = header
        .ids
        .len()
        .checked_mul(header.dim)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad("size overflows"))?;
    if payload.len() != expected {
        return Err(bad(&format!(
            "payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(header
        .ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| Embedding {
            id,
            vec: values[i * header.dim..(i + 1) * header.dim].to_vec(),
        })
        .collect())
}
