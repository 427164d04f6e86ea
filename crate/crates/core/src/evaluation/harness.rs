use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::vecops;
use crate::data::tokenizer::Vocab;
use crate::data::{FailureKind, FailureRecord, LabeledRecord, ScoredPairRecord, TextRecord};
use crate::encoder::{tokenize_texts, EncoderModel, TokenBatch};
use crate::task::TaskKind;

use super::cluster::{kmeans, v_measure};
use super::metrics::{average_precision, mean_over_queries, ndcg_at_k, spearman, Qrels, QueryMean};
use super::probe::{logistic_probe, ProbeResult};
use super::report::render_table;
use super::EvalError;

const ENCODE_CHUNK: usize = 64;

/// Frozen model plus the inference settings shared by every evaluation.
#[derive(Clone, Copy)]
pub struct Embedder<'a> {
    pub model: &'a EncoderModel,
    pub vocab: &'a Vocab,
    pub dim: usize,
    pub instructions: bool,
}

impl<'a> Embedder<'a> {
    pub fn new(model: &'a EncoderModel, vocab: &'a Vocab, dim: usize, instructions: bool) -> Self {
        Self {
            model,
            vocab,
            dim,
            instructions,
        }
    }

    /// Unit-norm embeddings through `adapter`, with `role`'s instruction prefix when enabled.
    pub fn embed_as(
        &self,
        texts: &[String],
        adapter: Option<TaskKind>,
        role: Option<TaskKind>,
    ) -> Result<Vec<Vec<f64>>, EvalError> {
        let max = self.model.config().max_seq_len;
        let base = self.model.config().rope_base_infer;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(ENCODE_CHUNK) {
            let mut seqs = tokenize_texts(self.vocab, chunk, role, self.instructions);
            for s in &mut seqs {
                s.truncate(max);
            }
            let batch = TokenBatch::from_sequences(&seqs, max);
            out.extend(self.model.embed(&batch, adapter, self.dim, base)?);
        }
        Ok(out)
    }

    pub fn embed(
        &self,
        texts: &[String],
        task: Option<TaskKind>,
    ) -> Result<Vec<Vec<f64>>, EvalError> {
        self.embed_as(texts, task, task)
    }
}

/// Which adapters encode queries and passages in asymmetric retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterMode {
    /// The base model with no adapter.
    None,
    /// The query adapter on both sides.
    Shared,
    /// Query and passage adapters.
    Separate,
}

impl AdapterMode {
    /// The richest mode the model supports.
    pub fn detect(model: &EncoderModel) -> Self {
        let has = |t| model.adapter(t).is_some();
        match (
            has(TaskKind::RetrievalQuery),
            has(TaskKind::RetrievalPassage),
        ) {
            (true, true) => AdapterMode::Separate,
            (true, false) => AdapterMode::Shared,
            _ => AdapterMode::None,
        }
    }

    pub fn adapters(self) -> (Option<TaskKind>, Option<TaskKind>) {
        match self {
            AdapterMode::None => (None, None),
            AdapterMode::Shared => (
                Some(TaskKind::RetrievalQuery),
                Some(TaskKind::RetrievalQuery),
            ),
            AdapterMode::Separate => (
                Some(TaskKind::RetrievalQuery),
                Some(TaskKind::RetrievalPassage),
            ),
        }
    }

    pub fn tasks(self) -> Vec<TaskKind> {
        let (q, p) = self.adapters();
        let set: BTreeSet<TaskKind> = q.into_iter().chain(p).collect();
        set.into_iter().collect()
    }
}

type Rows = Vec<Vec<f64>>;

fn retrieval_embeddings(
    emb: &Embedder,
    mode: AdapterMode,
    queries: &[String],
    docs: &[String],
) -> Result<(Rows, Rows), EvalError> {
    let (qa, pa) = mode.adapters();
    let q = emb.embed_as(queries, qa, Some(TaskKind::RetrievalQuery))?;
    let d = emb.embed_as(docs, pa, Some(TaskKind::RetrievalPassage))?;
    Ok((q, d))
}

/// Candidate indices by descending cosine, ties by index.
pub fn rank_by_cosine(query: &[f64], candidates: &[Vec<f64>]) -> Vec<usize> {
    let scores: Vec<f64> = candidates.iter().map(|c| vecops::dot(query, c)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub ndcg: QueryMean,
    pub map: QueryMean,
}

pub fn eval_retrieval(
    emb: &Embedder,
    mode: AdapterMode,
    queries: &[TextRecord],
    docs: &[TextRecord],
    qrels: &Qrels,
    k: usize,
) -> Result<RetrievalScores, EvalError> {
    if docs.is_empty() || queries.is_empty() {
        return Err(EvalError::Input(
            "retrieval needs queries and documents".into(),
        ));
    }
    let doc_ids: BTreeSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    let query_ids: BTreeSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    for (qid, rels) in qrels {
        if !query_ids.contains(qid.as_str()) {
            return Err(EvalError::Input(format!(
                "qrels reference unknown query {qid}"
            )));
        }
        if let Some(d) = rels.keys().find(|d| !doc_ids.contains(d.as_str())) {
            return Err(EvalError::Input(format!(
                "qrels reference unknown document {d}"
            )));
        }
    }
    let qt: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
    let dt: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    let (qe, de) = retrieval_embeddings(emb, mode, &qt, &dt)?;
    let rankings: BTreeMap<String, Vec<String>> = queries
        .iter()
        .zip(&qe)
        .map(|(q, v)| {
            let order = rank_by_cosine(v, &de);
            (
                q.id.clone(),
                order.into_iter().map(|i| docs[i].id.clone()).collect(),
            )
        })
        .collect();
    Ok(RetrievalScores {
        ndcg: mean_over_queries(&rankings, qrels, |r, q| ndcg_at_k(r, q, k))?,
        map: mean_over_queries(&rankings, qrels, average_precision)?,
    })
}

/// Spearman correlation between pair cosines and gold scores.
pub fn eval_sts(
    emb: &Embedder,
    task: Option<TaskKind>,
    pairs: &[ScoredPairRecord],
) -> Result<f64, EvalError> {
    let a: Vec<String> = pairs.iter().map(|p| p.q.clone()).collect();
    let b: Vec<String> = pairs.iter().map(|p| p.p.clone()).collect();
    let ea = emb.embed(&a, task)?;
    let eb = emb.embed(&b, task)?;
    let cos: Vec<f64> = ea.iter().zip(&eb).map(|(x, y)| vecops::dot(x, y)).collect();
    let gold: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    spearman(&cos, &gold)
}

pub fn eval_classification(
    emb: &Embedder,
    task: Option<TaskKind>,
    train: &[LabeledRecord],
    test: &[LabeledRecord],
) -> Result<ProbeResult, EvalError> {
    let texts = |r: &[LabeledRecord]| r.iter().map(|x| x.text.clone()).collect::<Vec<_>>();
    let labels = |r: &[LabeledRecord]| r.iter().map(|x| x.label.clone()).collect::<Vec<_>>();
    let xtr = emb.embed(&texts(train), task)?;
    let xte = emb.embed(&texts(test), task)?;
    logistic_probe(&xtr, &labels(train), &xte, &labels(test))
}

/// k-means with one cluster per gold label, scored by v-measure.
pub fn eval_clustering(
    emb: &Embedder,
    task: Option<TaskKind>,
    labeled: &[LabeledRecord],
    seed: u64,
) -> Result<f64, EvalError> {
    let texts: Vec<String> = labeled.iter().map(|r| r.text.clone()).collect();
    let gold: Vec<&str> = labeled.iter().map(|r| r.label.as_str()).collect();
    let k = gold.iter().collect::<BTreeSet<_>>().len();
    let x = emb.embed(&texts, task)?;
    let pred = kmeans(&x, k, seed)?;
    v_measure(&pred, &gold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimDelta {
    pub from: usize,
    pub to: usize,
    pub metric: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrlSweep<R> {
    pub dims: Vec<usize>,
    pub results: Vec<R>,
    /// Change of every metric between consecutive dims.
    pub deltas: Vec<DimDelta>,
}

/// Runs `eval` at each dim in ascending order. `metrics` extracts named values for the deltas.
pub fn mrl_sweep<R, E: From<EvalError>>(
    model: &EncoderModel,
    dims: &[usize],
    mut eval: impl FnMut(usize) -> Result<R, E>,
    metrics: impl Fn(&R) -> BTreeMap<String, f64>,
) -> Result<MrlSweep<R>, E> {
    let mut dims = dims.to_vec();
    dims.sort_unstable();
    dims.dedup();
    if dims.is_empty() {
        return Err(EvalError::Input("no dims to sweep".into()).into());
    }
    if let Some(d) = dims.iter().find(|d| !model.config().mrl_dims.contains(d)) {
        return Err(EvalError::Input(format!("dim {d} is not one of the model's mrl_dims")).into());
    }
    let results = dims
        .iter()
        .map(|&d| eval(d))
        .collect::<Result<Vec<_>, _>>()?;
    let mut deltas = Vec::new();
    for i in 1..dims.len() {
        let (a, b) = (metrics(&results[i - 1]), metrics(&results[i]));
        for (name, vb) in &b {
            if let Some(va) = a.get(name) {
                deltas.push(DimDelta {
                    from: dims[i - 1],
                    to: dims[i],
                    metric: name.clone(),
                    delta: vb - va,
                });
            }
        }
    }
    Ok(MrlSweep {
        dims,
        results,
        deltas,
    })
}

/// One trained model in the adapter × instruction grid.
pub struct AblationVariant<'a> {
    pub two_adapters: bool,
    pub instructions: bool,
    pub model: &'a EncoderModel,
    pub vocab: &'a Vocab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub two_adapters: bool,
    pub instructions: bool,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub k: usize,
    pub dim: usize,
    pub cells: Vec<AblationCell>,
    pub one_adapter_avg: f64,
    pub two_adapters_avg: f64,
    pub without_instructions_avg: f64,
    pub with_instructions_avg: f64,
    /// Direction only; not a pass/fail criterion.
    pub two_adapters_at_least_one: bool,
}

impl AblationReport {
    fn cell(&self, two: bool, instr: bool) -> f64 {
        self.cells
            .iter()
            .find(|c| c.two_adapters == two && c.instructions == instr)
            .map(|c| c.ndcg)
            .unwrap_or(f64::NAN)
    }

    pub fn to_table(&self) -> String {
        let f = |v: f64| format!("{v:.4}");
        let rows = vec![
            vec![
                "1 adapter".into(),
                f(self.cell(false, false)),
                f(self.cell(false, true)),
                f(self.one_adapter_avg),
            ],
            vec![
                "2 adapters".into(),
                f(self.cell(true, false)),
                f(self.cell(true, true)),
                f(self.two_adapters_avg),
            ],
            vec![
                "avg".into(),
                f(self.without_instructions_avg),
                f(self.with_instructions_avg),
                String::new(),
            ],
        ];
        let title = format!("nDCG@{} at dim {}\n", self.k, self.dim);
        title + &render_table(&["", "no instructions", "instructions", "avg"], &rows)
    }
}

pub fn adapter_ablation(
    variants: &[AblationVariant],
    queries: &[TextRecord],
    docs: &[TextRecord],
    qrels: &Qrels,
    dim: usize,
    k: usize,
) -> Result<AblationReport, EvalError> {
    let mut cells = Vec::new();
    for two in [false, true] {
        for instr in [false, true] {
            let matching: Vec<&AblationVariant> = variants
                .iter()
                .filter(|v| v.two_adapters == two && v.instructions == instr)
                .collect();
            let name = format!(
                "{} adapter(s), instructions {}",
                if two { 2 } else { 1 },
                if instr { "on" } else { "off" }
            );
            let v = match matching.as_slice() {
                [v] => v,
                [] => return Err(EvalError::MissingVariant(name)),
                _ => return Err(EvalError::Input(format!("duplicate variant: {name}"))),
            };
            let mode = if two {
                AdapterMode::Separate
            } else {
                AdapterMode::Shared
            };
            let emb = Embedder::new(v.model, v.vocab, dim, instr);
            let s = eval_retrieval(&emb, mode, queries, docs, qrels, k)?;
            cells.push(AblationCell {
                two_adapters: two,
                instructions: instr,
                ndcg: s.ndcg.mean,
            });
        }
    }
    let avg = |f: &dyn Fn(&AblationCell) -> bool| {
        let xs: Vec<f64> = cells.iter().filter(|c| f(c)).map(|c| c.ndcg).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let one = avg(&|c| !c.two_adapters);
    let two = avg(&|c| c.two_adapters);
    Ok(AblationReport {
        k,
        dim,
        one_adapter_avg: one,
        two_adapters_avg: two,
        without_instructions_avg: avg(&|c| !c.instructions),
        with_instructions_avg: avg(&|c| c.instructions),
        two_adapters_at_least_one: two >= one,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureScores {
    pub cases: usize,
    pub map: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub mode: AdapterMode,
    pub dim: usize,
    pub kinds: BTreeMap<FailureKind, FailureScores>,
}

impl FailureReport {
    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .kinds
            .iter()
            .map(|(k, s)| {
                vec![
                    k.as_str().to_uppercase(),
                    s.cases.to_string(),
                    format!("{:.2}", 100.0 * s.map),
                    format!("{:.2}", 100.0 * s.ndcg_at_10),
                ]
            })
            .collect();
        render_table(&["case", "n", "mAP %", "nDCG@10 %"], &rows)
    }
}

/// Ranks each record's gold answer among its 8 candidates by cosine with the query.
pub fn failure_eval(
    emb: &Embedder,
    mode: AdapterMode,
    records: &[FailureRecord],
) -> Result<FailureReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Input("no failure records".into()));
    }
    let mut grouped: BTreeMap<FailureKind, Vec<&FailureRecord>> = BTreeMap::new();
    for r in records {
        crate::data::Record::validate(r).map_err(EvalError::Input)?;
        grouped.entry(r.kind).or_default().push(r);
    }
    let mut kinds = BTreeMap::new();
    for (kind, recs) in grouped {
        let queries: Vec<String> = recs.iter().map(|r| r.query.clone()).collect();
        let cands: Vec<String> = recs
            .iter()
            .flat_map(|r| std::iter::once(r.gold.clone()).chain(r.distractors.iter().cloned()))
            .collect();
        let (qe, ce) = retrieval_embeddings(emb, mode, &queries, &cands)?;
        let per = 1 + recs[0].distractors.len();
        let (mut ap, mut nd) = (0.0, 0.0);
        for (i, q) in qe.iter().enumerate() {
            let order = rank_by_cosine(q, &ce[i * per..(i + 1) * per]);
            let ids: Vec<String> = order.iter().map(|j| j.to_string()).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let rels = BTreeMap::from([("0".to_string(), 1.0)]);
            ap += average_precision(&refs, &rels).expect("gold is relevant");
            nd += ndcg_at_k(&refs, &rels, 10).expect("gold is relevant");
        }
        let n = recs.len() as f64;
        kinds.insert(
            kind,
            FailureScores {
                cases: recs.len(),
                map: ap / n,
                ndcg_at_10: nd / n,
            },
        );
    }
    Ok(FailureReport {
        mode,
        dim: emb.dim,
        kinds,
    })
}
