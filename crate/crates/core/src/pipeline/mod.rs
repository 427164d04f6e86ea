//! Run configuration and the end-to-end commands behind the CLI: data
//! preparation, the three training stages and report generation.

mod config;
mod embeddings;
mod prepare;
mod reports;
mod train;

pub use config::{DataPaths, EvalSettings, RunConfig};
pub use embeddings::{
    encode_records, read_embeddings_binary, write_embeddings_binary, Embedding, EmbeddingsError,
    EMBEDDINGS_MAGIC, EMBEDDINGS_VERSION,
};
pub use prepare::{
    class_tuples, filter_pairs, gen_failures, mine_negatives, prepare_toy_corpus, quality_convert,
    toy_run_config, write_toy_corpus, FilterSummary, ToyFiles, TOY_NEGATIVES,
};
pub use reports::{
    ablation_report, classification_report, clustering_report, failure_report, mrl_sweep_report,
    retrieval_report, sts_report, ReportContext,
};
pub use train::{build_vocab, pretrain, train_adapter, train_pairs};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::DataError;
use crate::encoder::EncoderError;
use crate::evaluation::EvalError;
use crate::trainer::{CheckpointError, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 for usage and configuration, 3 for NaN or divergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) => 1,
            PipelineError::Train(TrainError::Plan(_)) => 1,
            PipelineError::Train(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

pub(crate) fn io_error(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a temporary sibling, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_error(&tmp))?;
        f.write_all(bytes).map_err(io_error(&tmp))?;
        f.sync_all().map_err(io_error(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_error(path))
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_vec_pretty(value).expect("report serializes");
    s.push(b'\n');
    write_atomic(path, &s)
}
