//! Retrieval, similarity, classification and clustering metrics, and the
//! model-level evaluations built on them.

mod cluster;
mod harness;
mod metrics;
mod probe;
mod report;

pub use cluster::{kmeans, v_measure, KMEANS_MAX_ITER, KMEANS_TOL};
pub use harness::{
    adapter_ablation, eval_classification, eval_clustering, eval_retrieval, eval_sts, failure_eval,
    mrl_sweep, rank_by_cosine, AblationCell, AblationReport, AblationVariant, AdapterMode,
    DimDelta, Embedder, FailureReport, FailureScores, MrlSweep, RetrievalScores,
};
pub use metrics::{
    average_precision, average_ranks, mean_over_queries, ndcg_at_k, pearson, qrels_from_records,
    spearman, Qrels, QueryMean,
};
pub use probe::{logistic_probe, ProbeResult, PROBE_ITERATIONS, PROBE_L2, PROBE_LR};
pub use report::{render_table, AdapterConfig, EvalReport};

use crate::encoder::EncoderError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    Input(String),
    #[error("correlation is undefined for constant input")]
    ConstantInput,
    #[error("missing ablation variant: {0}")]
    MissingVariant(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}
