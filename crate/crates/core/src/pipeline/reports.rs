use std::collections::BTreeMap;

use crate::data::{FailureRecord, LabeledRecord, QrelRecord, ScoredPairRecord, TextRecord};
use crate::evaluation::{
    adapter_ablation, eval_classification, eval_clustering, eval_retrieval, eval_sts, failure_eval,
    mrl_sweep, qrels_from_records, AblationReport, AblationVariant, AdapterConfig, AdapterMode,
    Embedder, EvalReport, FailureReport, MrlSweep,
};
use crate::task::TaskKind;
use crate::trainer::Checkpoint;

use super::PipelineError;

/// Identity stamped on every report.
#[derive(Debug, Clone)]
pub struct ReportContext {
    pub run_id: String,
    pub seed: u64,
    pub timestamp: bool,
}

impl ReportContext {
    fn report(
        &self,
        task: &str,
        tasks: Vec<TaskKind>,
        instructions: bool,
        dim: usize,
    ) -> EvalReport {
        EvalReport {
            run_id: self.run_id.clone(),
            task: task.to_string(),
            adapters: AdapterConfig {
                tasks,
                instructions,
            },
            mrl_dim: dim,
            metrics: BTreeMap::new(),
            counts: BTreeMap::new(),
            seed: self.seed,
            timestamp: self.timestamp.then(|| {
                humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string()
            }),
        }
    }
}

fn finish(r: EvalReport) -> Result<EvalReport, PipelineError> {
    r.validate()?;
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
pub fn retrieval_report(
    ctx: &ReportContext,
    ck: &Checkpoint,
    mode: AdapterMode,
    instructions: bool,
    queries: &[TextRecord],
    docs: &[TextRecord],
    qrels: &[QrelRecord],
    dim: usize,
    k: usize,
) -> Result<EvalReport, PipelineError> {
    let qrels = qrels_from_records(qrels)?;
    let emb = Embedder::new(&ck.model, &ck.vocab, dim, instructions);
    let s = eval_retrieval(&emb, mode, queries, docs, &qrels, k)?;
    let mut r = ctx.report("retrieval", mode.tasks(), instructions, dim);
    r.metrics.insert(format!("ndcg@{k}"), s.ndcg.mean);
    r.metrics.insert("map".into(), s.map.mean);
    r.counts
        .insert("queries_evaluated".into(), s.ndcg.evaluated);
    r.counts.insert("queries_excluded".into(), s.ndcg.excluded);
    finish(r)
}

pub fn sts_report(
    ctx: &ReportContext,
    ck: &Checkpoint,
    task: Option<TaskKind>,
    pairs: &[ScoredPairRecord],
    dim: usize,
) -> Result<EvalReport, PipelineError> {
    let emb = Embedder::new(&ck.model, &ck.vocab, dim, false);
    let rho = eval_sts(&emb, task, pairs)?;
    let mut r = ctx.report("sts", task.into_iter().collect(), false, dim);
    r.metrics.insert("spearman".into(), rho);
    r.counts.insert("pairs".into(), pairs.len());
    finish(r)
}

pub fn classification_report(
    ctx: &ReportContext,
    ck: &Checkpoint,
    task: Option<TaskKind>,
    train: &[LabeledRecord],
    test: &[LabeledRecord],
    dim: usize,
) -> Result<EvalReport, PipelineError> {
    let emb = Embedder::new(&ck.model, &ck.vocab, dim, false);
    let p = eval_classification(&emb, task, train, test)?;
    let mut r = ctx.report("classification", task.into_iter().collect(), false, dim);
    r.metrics.insert("accuracy".into(), p.accuracy);
    r.counts.insert("test".into(), test.len());
    r.counts.insert("unseen_class".into(), p.unseen);
    finish(r)
}

pub fn clustering_report(
    ctx: &ReportContext,
    ck: &Checkpoint,
    task: Option<TaskKind>,
    labeled: &[LabeledRecord],
    dim: usize,
) -> Result<EvalReport, PipelineError> {
    let emb = Embedder::new(&ck.model, &ck.vocab, dim, false);
    let v = eval_clustering(&emb, task, labeled, ctx.seed)?;
    let mut r = ctx.report("clustering", task.into_iter().collect(), false, dim);
    r.metrics.insert("v_measure".into(), v);
    r.counts.insert("points".into(), labeled.len());
    finish(r)
}

#[allow(clippy::too_many_arguments)]
pub fn mrl_sweep_report(
    ctx: &ReportContext,
    ck: &Checkpoint,
    mode: AdapterMode,
    instructions: bool,
    queries: &[TextRecord],
    docs: &[TextRecord],
    qrels: &[QrelRecord],
    dims: &[usize],
    k: usize,
) -> Result<MrlSweep<EvalReport>, PipelineError> {
    mrl_sweep(
        &ck.model,
        dims,
        |dim| retrieval_report(ctx, ck, mode, instructions, queries, docs, qrels, dim, k),
        |r| r.metrics.clone(),
    )
}

/// `variants` holds (two adapters, instructions, checkpoint) for the four cells.
pub fn ablation_report(
    variants: &[(bool, bool, &Checkpoint)],
    queries: &[TextRecord],
    docs: &[TextRecord],
    qrels: &[QrelRecord],
    dim: usize,
    k: usize,
) -> Result<AblationReport, PipelineError> {
    let qrels = qrels_from_records(qrels)?;
    let vs: Vec<AblationVariant> = variants
        .iter()
        .map(|&(two, instr, ck)| AblationVariant {
            two_adapters: two,
            instructions: instr,
            model: &ck.model,
            vocab: &ck.vocab,
        })
        .collect();
    Ok(adapter_ablation(&vs, queries, docs, &qrels, dim, k)?)
}

pub fn failure_report(
    ck: &Checkpoint,
    mode: AdapterMode,
    instructions: bool,
    records: &[FailureRecord],
    dim: usize,
) -> Result<FailureReport, PipelineError> {
    let emb = Embedder::new(&ck.model, &ck.vocab, dim, instructions);
    Ok(failure_eval(&emb, mode, records)?)
}
