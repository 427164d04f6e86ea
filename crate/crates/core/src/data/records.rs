//! JSONL record formats. Unknown keys are ignored; a missing key or a
//! violated invariant is reported with its 1-based line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use super::DataError;

pub trait Record: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

fn non_empty(field: &str, s: &str) -> Result<(), String> {
    if s.trim().is_empty() {
        Err(format!("field {field} is empty"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub q: String,
    pub p: String,
    pub dataset: String,
}

impl Record for PairRecord {
    fn validate(&self) -> Result<(), String> {
        non_empty("q", &self.q)?;
        non_empty("p", &self.p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub q: String,
    pub p: String,
    pub negs: Vec<String>,
    pub dataset: String,
}

impl Record for TupleRecord {
    fn validate(&self) -> Result<(), String> {
        non_empty("q", &self.q)?;
        non_empty("p", &self.p)?;
        if self.negs.is_empty() {
            return Err("negs must hold at least one text".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPairRecord {
    pub q: String,
    pub p: String,
    pub score: f64,
    pub scale_max: f64,
}

impl ScoredPairRecord {
    /// Score rescaled to [0, 1].
    pub fn relevance(&self) -> f64 {
        self.score / self.scale_max
    }
}

impl Record for ScoredPairRecord {
    fn validate(&self) -> Result<(), String> {
        non_empty("q", &self.q)?;
        non_empty("p", &self.p)?;
        if !(self.scale_max.is_finite() && self.scale_max > 0.0) {
            return Err(format!("scale_max {} must be positive", self.scale_max));
        }
        if !(0.0..=self.scale_max).contains(&self.score) {
            return Err(format!(
                "score {} outside [0, {}]",
                self.score, self.scale_max
            ));
        }
        Ok(())
    }
}

fn label_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Label {
        Text(String),
        Int(i64),
    }
    Ok(match Label::deserialize(d)? {
        Label::Text(s) => s,
        Label::Int(i) => i.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub text: String,
    /// Integer labels are read as their decimal string.
    #[serde(deserialize_with = "label_string")]
    pub label: String,
    pub dataset: String,
}

impl Record for LabeledRecord {
    fn validate(&self) -> Result<(), String> {
        non_empty("text", &self.text)?;
        non_empty("label", &self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityThread {
    pub query: String,
    pub answers: Vec<Answer>,
}

impl Record for QualityThread {
    fn validate(&self) -> Result<(), String> {
        non_empty("query", &self.query)?;
        for (i, a) in self.answers.iter().enumerate() {
            if !(0.0..=1.0).contains(&a.score) {
                return Err(format!("answer {i} score {} outside [0, 1]", a.score));
            }
        }
        Ok(())
    }
}

/// A text with an identifier: corpus documents, queries and encode input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

impl Record for TextRecord {
    fn validate(&self) -> Result<(), String> {
        non_empty("id", &self.id)
    }
}

/// Graded relevance of a document for a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrelRecord {
    pub qid: String,
    pub did: String,
    pub rel: f64,
}

impl Record for QrelRecord {
    fn validate(&self) -> Result<(), String> {
        non_empty("qid", &self.qid)?;
        non_empty("did", &self.did)?;
        if !(self.rel.is_finite() && self.rel >= 0.0) {
            return Err(format!(
                "relevance {} must be finite and non-negative",
                self.rel
            ));
        }
        Ok(())
    }
}

/// Parses JSONL, skipping blank lines.
pub fn read_jsonl<T: Record>(reader: impl BufRead) -> Result<Vec<T>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        rec.validate()
            .map_err(|msg| DataError::Parse { line: line_no, msg })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl_file<T: Record>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        DataError::Parse { line, msg } => DataError::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_jsonl_file<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    {
        let f = File::create(&tmp).map_err(io)?;
        write_jsonl(BufWriter::new(f), records).map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}
