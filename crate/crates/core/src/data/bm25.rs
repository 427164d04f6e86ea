use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::records::TupleRecord;
use super::tokenizer::words;
use super::DataError;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Term statistics for Okapi BM25 over a fixed corpus.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    docs: Vec<Vec<String>>,
    tf: Vec<HashMap<String, usize>>,
    df: HashMap<String, usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn new<S: AsRef<str>>(corpus: &[S]) -> Result<Self, DataError> {
        if corpus.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let docs: Vec<Vec<String>> = corpus.iter().map(|d| words(d.as_ref()).collect()).collect();
        let mut df = HashMap::new();
        let tf: Vec<HashMap<String, usize>> = docs
            .iter()
            .map(|d| {
                let mut counts = HashMap::new();
                for w in d {
                    *counts.entry(w.clone()).or_insert(0) += 1;
                }
                for w in counts.keys() {
                    *df.entry(w.clone()).or_insert(0) += 1;
                }
                counts
            })
            .collect();
        let avg_len = docs.iter().map(Vec::len).sum::<usize>() as f64 / docs.len() as f64;
        Ok(Self {
            docs,
            tf,
            df,
            avg_len,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of document `doc` for a query; repeated query terms count repeatedly.
    pub fn score(&self, query: &str, doc: usize) -> f64 {
        let len = self.docs[doc].len() as f64;
        let norm = if self.avg_len > 0.0 {
            BM25_K1 * (1.0 - BM25_B + BM25_B * len / self.avg_len)
        } else {
            BM25_K1
        };
        words(query)
            .map(|t| {
                let tf = self.tf[doc].get(&t).copied().unwrap_or(0) as f64;
                if tf == 0.0 {
                    0.0
                } else {
                    self.idf(&t) * tf * (BM25_K1 + 1.0) / (tf + norm)
                }
            })
            .sum()
    }

    /// All documents by descending score, ties by index.
    pub fn rank(&self, query: &str) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = (0..self.docs.len())
            .map(|d| (d, self.score(query, d)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
    }
}

/// Top-`m` BM25 documents for `query` that are not the positive, padded with
/// random corpus documents when fewer than `m` score above zero.
pub fn mine_hard_negatives<S: AsRef<str>>(
    query: &str,
    positive: &str,
    corpus: &[S],
    index: &Bm25Index,
    m: usize,
    dataset: &str,
    rng: &mut impl Rng,
) -> Result<TupleRecord, DataError> {
    if corpus.len() != index.len() {
        return Err(DataError::InvalidArgument(format!(
            "index covers {} documents, corpus has {}",
            index.len(),
            corpus.len()
        )));
    }
    let eligible = |d: usize| corpus[d].as_ref() != positive;
    let available = (0..corpus.len()).filter(|&d| eligible(d)).count();
    if available < m {
        return Err(DataError::CorpusTooSmall {
            available,
            needed: m,
        });
    }
    let mut chosen: Vec<usize> = index
        .rank(query)
        .into_iter()
        .filter(|&(d, s)| s > 0.0 && eligible(d))
        .take(m)
        .map(|(d, _)| d)
        .collect();
    if chosen.len() < m {
        let rest: Vec<usize> = (0..corpus.len())
            .filter(|&d| eligible(d) && !chosen.contains(&d))
            .collect();
        chosen.extend(rest.choose_multiple(rng, m - chosen.len()).copied());
    }
    Ok(TupleRecord {
        q: query.to_string(),
        p: positive.to_string(),
        negs: chosen
            .iter()
            .map(|&d| corpus[d].as_ref().to_string())
            .collect(),
        dataset: dataset.to_string(),
    })
}
