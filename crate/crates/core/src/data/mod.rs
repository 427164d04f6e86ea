//! Tokenization, masking, pair filtering, batching and negative mining.

mod bm25;
pub mod failures;
mod filter;
mod masking;
pub mod records;
mod sampler;
pub mod tokenizer;
pub mod toy;
mod tuples;

pub use bm25::{mine_hard_negatives, Bm25Index, BM25_B, BM25_K1};
pub use failures::{gen_failure_case, FailureKind, FailureRecord, TemplateBank};
pub use filter::{overlap_counts, overlap_filter, FilterDecision};
pub use masking::{whole_word_mask, MaskedSequence, MASK_RATIO};
pub use records::{
    read_jsonl, read_jsonl_file, write_jsonl, write_jsonl_file, Answer, LabeledRecord, PairRecord,
    QrelRecord, QualityThread, Record, ScoredPairRecord, TextRecord, TupleRecord,
};
pub use sampler::BatchSampler;
pub use tuples::{
    append_unique_id, build_class_tuples, convert_quality_threads, unique_id, QualityConversion,
    CLASS_NEGATIVES, QUALITY_GAP,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus has {available} candidate documents, {needed} negatives requested")]
    CorpusTooSmall { available: usize, needed: usize },
    #[error("dataset {dataset} has {size} records, fewer than the batch size {batch}")]
    DatasetTooSmall {
        dataset: String,
        size: usize,
        batch: usize,
    },
    #[error("no classification tuple can be formed: {0}")]
    NoTuples(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("template bank: {0}")]
    Template(String),
}
