use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::tokenizer::{Vocab, MASK, NUM_SPECIALS};
use crate::data::{
    append_unique_id, unique_id, whole_word_mask, BatchSampler, DataError, LabeledRecord,
    PairRecord, ScoredPairRecord, TupleRecord,
};
use crate::encoder::{tokenize_texts, Bindings, EncoderModel, TokenBatch, Trainable};
use crate::objectives::{
    cosent_loss, mlm_loss, mrl_loss, pair_loss_bidirectional, separation_loss, triplet_loss,
    LossError, Temperature,
};
use crate::task::TaskKind;

use super::optim::{AdamW, OptimizerState};
use super::plan::{lr_schedule, Stage, StagePlan};
use super::TrainError;

/// Losses above this abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub task: Option<TaskKind>,
    pub steps: usize,
    pub losses: Vec<f64>,
    /// Steps whose batch produced no gradient (e.g. a single-label separation batch).
    pub skipped: usize,
}

/// Training data for one adapter.
#[derive(Debug, Clone)]
pub enum AdapterData {
    Classification(Vec<TupleRecord>),
    TextMatching(Vec<ScoredPairRecord>),
    Retrieval(Vec<TupleRecord>),
    Separation {
        labeled: Vec<LabeledRecord>,
        /// Used on alternate steps when the plan mixes pairs in.
        pairs: Vec<PairRecord>,
    },
}

impl AdapterData {
    fn matches(&self, task: TaskKind) -> bool {
        matches!(
            (self, task),
            (AdapterData::Classification(_), TaskKind::Classification)
                | (AdapterData::TextMatching(_), TaskKind::TextMatching)
                | (
                    AdapterData::Retrieval(_),
                    TaskKind::RetrievalQuery | TaskKind::RetrievalPassage
                )
                | (AdapterData::Separation { .. }, TaskKind::Separation)
        )
    }
}

struct StepCtx {
    phase: usize,
    /// 1-based step within the stage.
    step: usize,
}

/// Shared update loop. `build` returns `None` for a batch that should not
/// produce an update.
fn train_loop<F>(
    model: &mut EncoderModel,
    plan: &StagePlan,
    trainable: Trainable,
    mut build: F,
) -> Result<(StageReport, OptimizerState), TrainError>
where
    F: FnMut(&mut Graph, &mut Bindings, &StepCtx) -> Result<Option<Var>, TrainError>,
{
    let total = plan.total_steps();
    let allowed: Vec<String> = match &trainable {
        Trainable::Adapters(tasks) => tasks
            .iter()
            .map(|t| format!("adapter/{}/", t.as_str()))
            .collect(),
        _ => Vec::new(),
    };
    let mut opt = OptimizerState::new(AdamW::default());
    let mut report = StageReport {
        stage: plan.stage,
        task: plan.task,
        steps: 0,
        losses: Vec::with_capacity(total),
        skipped: 0,
    };
    let mut step = 0;
    for (phase, p) in plan.phases.iter().enumerate() {
        for _ in 0..p.steps {
            step += 1;
            // shifted by one so the final update still moves
            let lr = lr_schedule(step, plan.warmup_steps, total + 1, plan.max_lr)?;
            let mut g = Graph::new();
            let grads = {
                let mut bind = Bindings::new(model, trainable.clone());
                let Some(loss) = build(&mut g, &mut bind, &StepCtx { phase, step })? else {
                    report.skipped += 1;
                    continue;
                };
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        step,
                        what: "loss".into(),
                    });
                }
                if value > DIVERGENCE_LIMIT {
                    return Err(TrainError::Diverged { step, loss: value });
                }
                report.losses.push(value);
                if !g.requires_grad(loss) {
                    report.skipped += 1;
                    continue;
                }
                g.backward(loss)?;
                let mut grads = Vec::new();
                for (name, v) in bind.trainable_vars(&g) {
                    let frozen = match &trainable {
                        Trainable::Adapters(_) => !allowed.iter().any(|a| name.starts_with(a)),
                        _ => name.starts_with("adapter/"),
                    };
                    if frozen {
                        return Err(TrainError::FrozenGradient(name));
                    }
                    if let Some(t) = g.grad(v) {
                        if !t.all_finite() {
                            return Err(TrainError::NonFinite {
                                step,
                                what: format!("gradient of {name}"),
                            });
                        }
                        grads.push((name, t));
                    }
                }
                grads
            };
            opt.apply(model, &grads, lr)?;
            report.steps += 1;
        }
    }
    Ok((report, opt))
}

fn rng_for(plan: &StagePlan) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(plan.seed)
}

/// One sampler per phase, keeping only datasets that can fill a batch.
fn phase_samplers<T: Clone>(
    plan: &StagePlan,
    records: &[T],
    dataset: impl Fn(&T) -> &str,
    keep: impl Fn(&T, usize) -> bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BatchSampler<T>>, TrainError> {
    let mut out = Vec::new();
    for (i, p) in plan.phases.iter().enumerate() {
        if p.steps == 0 {
            continue;
        }
        let kept: Vec<T> = records.iter().filter(|r| keep(r, i)).cloned().collect();
        let groups = BatchSampler::group_by(&kept, &dataset);
        let (big, small): (BTreeMap<_, _>, BTreeMap<_, _>) = groups
            .into_iter()
            .partition(|(_, v)| v.len() >= p.batch_size);
        for (name, v) in &small {
            log::warn!(
                "phase {i}: dataset {name} has {} records, below batch size {}; skipped",
                v.len(),
                p.batch_size
            );
        }
        let datasets = if big.is_empty() { small } else { big };
        out.push(BatchSampler::new(datasets, p.batch_size, rng)?);
    }
    Ok(out)
}

/// Maps the stage's phase index to the sampler built for it (phases with 0 steps have none).
fn sampler_index(plan: &StagePlan, phase: usize) -> usize {
    plan.phases[..phase].iter().filter(|p| p.steps > 0).count()
}

fn truncated(
    vocab: &Vocab,
    texts: &[String],
    task: Option<TaskKind>,
    instructions: bool,
    len: usize,
) -> Vec<Vec<usize>> {
    tokenize_texts(vocab, texts, task, instructions)
        .into_iter()
        .map(|mut s| {
            s.truncate(len);
            s
        })
        .collect()
}

/// Applies the plan's MRL wrapper, or calls `f` on the full embeddings.
fn with_mrl<F>(
    g: &mut Graph,
    plan: &StagePlan,
    allowed: &[usize],
    embs: &[Var],
    mut f: F,
) -> Result<Var, TrainError>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var, LossError>,
{
    Ok(match &plan.mrl {
        Some(m) => mrl_loss(g, embs, &m.dims, &m.weights(), allowed, f)?,
        None => f(g, embs)?,
    })
}

fn check_plan(model: &EncoderModel, plan: &StagePlan, stage: Stage) -> Result<(), TrainError> {
    if plan.stage != stage {
        return Err(TrainError::Plan(format!(
            "expected a stage {:?} plan, got {:?}",
            stage, plan.stage
        )));
    }
    plan.validate(model.config())
}

/// Masked-language-model pre-training of the base weights.
pub fn run_stage1(
    model: &mut EncoderModel,
    vocab: &Vocab,
    texts: &[String],
    plan: &StagePlan,
) -> Result<(StageReport, OptimizerState), TrainError> {
    check_plan(model, plan, Stage::Pretrain)?;
    let words = vocab.len().min(model.config().vocab_size);
    let seqs: Vec<(Vec<usize>, String)> = texts
        .iter()
        .map(|t| (vocab.tokenize(t), "mlm".to_string()))
        .filter(|(s, _)| !s.is_empty())
        .collect();
    if seqs.is_empty() && plan.total_steps() > 0 {
        return Err(DataError::EmptyCorpus.into());
    }
    let mut rng = rng_for(plan);
    let mut samplers = phase_samplers(plan, &seqs, |r| r.1.as_str(), |_, _| true, &mut rng)?;
    let ratio = plan.mask_ratio;
    let (report, opt) = train_loop(model, plan, Trainable::Base, |g, bind, ctx| {
        let phase = &plan.phases[ctx.phase];
        let (_, batch) = samplers[sampler_index(plan, ctx.phase)].sample(&mut rng);
        let mut corrupted = Vec::with_capacity(batch.len());
        let mut positions = Vec::new();
        let mut targets = Vec::new();
        for (b, (ids, _)) in batch.iter().enumerate() {
            let ids = &ids[..ids.len().min(phase.seq_len)];
            let m = whole_word_mask(ids, ratio, words, &mut rng)?;
            positions.extend(m.positions.iter().map(|&p| b * phase.seq_len + p));
            targets.extend_from_slice(&m.targets);
            corrupted.push(m.corrupted);
        }
        if positions.is_empty() {
            targets.push(corrupted[0][0]);
            corrupted[0][0] = MASK;
            positions.push(0);
        }
        let tb = TokenBatch::from_sequences(&corrupted, phase.seq_len);
        // from_sequences shrinks len to the longest sequence
        let positions: Vec<usize> = positions
            .iter()
            .map(|&p| (p / phase.seq_len) * tb.len + p % phase.seq_len)
            .collect();
        let model = bind.model();
        let states = model.forward(g, bind, &tb, None, model.config().rope_base_train)?;
        let picked = g.gather_rows(states, &positions)?;
        let logits = model.mlm_logits(g, bind, picked)?;
        let all: Vec<usize> = (0..positions.len()).collect();
        Ok(Some(mlm_loss(g, logits, &targets, &all)?))
    })?;
    model.stage_completed = model.stage_completed.max(1);
    Ok((report, opt))
}

#[allow(clippy::too_many_arguments)]
fn pair_step(
    g: &mut Graph,
    bind: &mut Bindings,
    vocab: &Vocab,
    pairs: &[PairRecord],
    task: Option<TaskKind>,
    seq_len: usize,
    tau: Temperature,
    plan: &StagePlan,
) -> Result<Var, TrainError> {
    let k = pairs.len();
    let texts: Vec<String> = pairs
        .iter()
        .map(|p| p.q.clone())
        .chain(pairs.iter().map(|p| p.p.clone()))
        .collect();
    let seqs = truncated(vocab, &texts, None, false, seq_len);
    let tb = TokenBatch::from_sequences(&seqs, seq_len);
    let model = bind.model();
    let d = model.config().d_model;
    let pooled = model.pooled(g, bind, &tb, task, model.config().rope_base_train)?;
    let q = g.slice(pooled, 0..k, 0..d)?;
    let p = g.slice(pooled, k..2 * k, 0..d)?;
    with_mrl(g, plan, &model.config().mrl_dims, &[q, p], |g, e| {
        pair_loss_bidirectional(g, e[0], e[1], tau)
    })
}

/// Contrastive pair training of the base weights.
pub fn run_stage2(
    model: &mut EncoderModel,
    vocab: &Vocab,
    pairs: &[PairRecord],
    plan: &StagePlan,
) -> Result<(StageReport, OptimizerState), TrainError> {
    check_plan(model, plan, Stage::Pairs)?;
    if model.stage_completed < 1 {
        log::warn!("stage II on a model without stage I pre-training");
    }
    let mut rng = rng_for(plan);
    let mut samplers = phase_samplers(
        plan,
        pairs,
        |r| r.dataset.as_str(),
        |r, i| {
            let n = vocab.tokenize(&r.q).len().min(vocab.tokenize(&r.p).len());
            n >= plan.phases[i].min_tokens.max(1)
        },
        &mut rng,
    )?;
    let (report, opt) = train_loop(model, plan, Trainable::Base, |g, bind, ctx| {
        let phase = &plan.phases[ctx.phase];
        let (_, batch) = samplers[sampler_index(plan, ctx.phase)].sample(&mut rng);
        Ok(Some(pair_step(
            g,
            bind,
            vocab,
            &batch,
            None,
            phase.seq_len,
            plan.temperature(ctx.phase),
            plan,
        )?))
    })?;
    model.stage_completed = model.stage_completed.max(2);
    Ok((report, opt))
}

/// Encodes `[q; p; negs]` with per-row adapters and applies the triplet loss.
#[allow(clippy::too_many_arguments)]
fn tuple_step(
    g: &mut Graph,
    bind: &mut Bindings,
    vocab: &Vocab,
    tuples: &[TupleRecord],
    roles: (TaskKind, TaskKind),
    adapters: (TaskKind, TaskKind),
    seq_len: usize,
    tau: Temperature,
    plan: &StagePlan,
) -> Result<Var, TrainError> {
    let k = tuples.len();
    let m = tuples.iter().map(|t| t.negs.len()).min().unwrap_or(0);
    let queries: Vec<String> = tuples.iter().map(|t| t.q.clone()).collect();
    let mut others: Vec<String> = tuples.iter().map(|t| t.p.clone()).collect();
    for t in tuples {
        others.extend(t.negs[..m].iter().cloned());
    }
    let mut seqs = truncated(vocab, &queries, Some(roles.0), plan.instructions, seq_len);
    seqs.extend(truncated(
        vocab,
        &others,
        Some(roles.1),
        plan.instructions,
        seq_len,
    ));
    let mut tasks = vec![Some(adapters.0); k];
    tasks.extend(std::iter::repeat_n(Some(adapters.1), others.len()));
    let model = bind.model();
    let d = model.config().d_model;
    let pooled = model.pooled_routed(g, bind, &seqs, &tasks, model.config().rope_base_train)?;
    let q = g.slice(pooled, 0..k, 0..d)?;
    let p = g.slice(pooled, k..2 * k, 0..d)?;
    let mut embs = vec![q, p];
    if m > 0 {
        embs.push(g.slice(pooled, 2 * k..2 * k + k * m, 0..d)?);
    }
    with_mrl(g, plan, &model.config().mrl_dims, &embs, |g, e| {
        triplet_loss(g, e[0], e[1], e.get(2).copied(), m, tau)
    })
}

/// Trains the plan's adapter(s) with the base weights frozen.
pub fn run_stage3(
    model: &mut EncoderModel,
    vocab: &Vocab,
    data: &AdapterData,
    plan: &StagePlan,
) -> Result<(StageReport, OptimizerState), TrainError> {
    check_plan(model, plan, Stage::Adapter)?;
    if model.stage_completed < 2 {
        return Err(TrainError::StageOrder {
            required: 3,
            needed: 2,
            found: model.stage_completed,
        });
    }
    let task = plan.task.expect("validated");
    if !data.matches(task) {
        return Err(TrainError::Plan(format!(
            "training data does not fit task {task}"
        )));
    }
    let tasks = plan.adapter_tasks();
    for &t in &tasks {
        if model.adapter(t).is_none() {
            model.add_adapter(t);
        }
    }
    let before = model.base_digest();
    let mut rng = rng_for(plan);
    let tau = plan.temperature(0);
    let rope_dims = model.config().mrl_dims.clone();
    let trainable = Trainable::Adapters(tasks.clone());

    let result = match data {
        AdapterData::Classification(tuples) => {
            let mut s =
                phase_samplers(plan, tuples, |r| r.dataset.as_str(), |_, _| true, &mut rng)?;
            train_loop(model, plan, trainable, |g, bind, ctx| {
                let (_, batch) = s[sampler_index(plan, ctx.phase)].sample(&mut rng);
                let tagged: Vec<TupleRecord> = batch
                    .iter()
                    .enumerate()
                    .map(|(i, t)| append_unique_id(t, &unique_id(i)))
                    .collect();
                let c = TaskKind::Classification;
                let seq_len = plan.phases[ctx.phase].seq_len;
                Ok(Some(tuple_step(
                    g,
                    bind,
                    vocab,
                    &tagged,
                    (c, c),
                    (c, c),
                    seq_len,
                    tau,
                    plan,
                )?))
            })
        }
        AdapterData::Retrieval(tuples) => {
            let mut s =
                phase_samplers(plan, tuples, |r| r.dataset.as_str(), |_, _| true, &mut rng)?;
            let roles = (TaskKind::RetrievalQuery, TaskKind::RetrievalPassage);
            let adapters = (
                TaskKind::RetrievalQuery,
                *tasks.last().expect("retrieval has adapters"),
            );
            train_loop(model, plan, trainable, |g, bind, ctx| {
                let (_, batch) = s[sampler_index(plan, ctx.phase)].sample(&mut rng);
                let seq_len = plan.phases[ctx.phase].seq_len;
                Ok(Some(tuple_step(
                    g, bind, vocab, &batch, roles, adapters, seq_len, tau, plan,
                )?))
            })
        }
        AdapterData::TextMatching(scored) => {
            let mut s = phase_samplers(plan, scored, |_| "scored", |_, _| true, &mut rng)?;
            train_loop(model, plan, trainable, |g, bind, ctx| {
                let (_, batch) = s[sampler_index(plan, ctx.phase)].sample(&mut rng);
                let k = batch.len();
                let texts: Vec<String> = batch
                    .iter()
                    .map(|r| r.q.clone())
                    .chain(batch.iter().map(|r| r.p.clone()))
                    .collect();
                let seq_len = plan.phases[ctx.phase].seq_len;
                let seqs = truncated(vocab, &texts, Some(task), plan.instructions, seq_len);
                let tb = TokenBatch::from_sequences(&seqs, seq_len);
                let model = bind.model();
                let d = model.config().d_model;
                let pooled =
                    model.pooled(g, bind, &tb, Some(task), model.config().rope_base_train)?;
                let q = g.slice(pooled, 0..k, 0..d)?;
                let p = g.slice(pooled, k..2 * k, 0..d)?;
                let zeta: Vec<f64> = batch.iter().map(ScoredPairRecord::relevance).collect();
                Ok(Some(with_mrl(g, plan, &rope_dims, &[q, p], |g, e| {
                    let scores = g.rowwise_cosine(e[0], e[1])?;
                    cosent_loss(g, scores, &zeta, tau)
                })?))
            })
        }
        AdapterData::Separation { labeled, pairs } => {
            let mut s =
                phase_samplers(plan, labeled, |r| r.dataset.as_str(), |_, _| true, &mut rng)?;
            let mut pair_s = if plan.mix_pairs {
                Some(phase_samplers(
                    plan,
                    pairs,
                    |r| r.dataset.as_str(),
                    |_, _| true,
                    &mut rng,
                )?)
            } else {
                None
            };
            train_loop(model, plan, trainable, |g, bind, ctx| {
                let seq_len = plan.phases[ctx.phase].seq_len;
                let idx = sampler_index(plan, ctx.phase);
                if let Some(ps) = pair_s.as_mut().filter(|_| ctx.step % 2 == 0) {
                    let (_, batch) = ps[idx].sample(&mut rng);
                    return Ok(Some(pair_step(
                        g,
                        bind,
                        vocab,
                        &batch,
                        Some(task),
                        seq_len,
                        Temperature::PAIR,
                        plan,
                    )?));
                }
                let (_, batch) = s[idx].sample(&mut rng);
                let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
                let labels: Vec<usize> = batch
                    .iter()
                    .map(|r| {
                        let n = ids.len();
                        *ids.entry(r.label.as_str()).or_insert(n)
                    })
                    .collect();
                let texts: Vec<String> = batch.iter().map(|r| r.text.clone()).collect();
                let seqs = truncated(vocab, &texts, Some(task), plan.instructions, seq_len);
                let tb = TokenBatch::from_sequences(&seqs, seq_len);
                let model = bind.model();
                let emb = model.pooled(g, bind, &tb, Some(task), model.config().rope_base_train)?;
                let mut degenerate = false;
                let loss = with_mrl(g, plan, &rope_dims, &[emb], |g, e| {
                    let s = separation_loss(g, e[0], &labels, tau)?;
                    degenerate |= s.degenerate;
                    Ok(s.loss)
                })?;
                Ok((!degenerate).then_some(loss))
            })
        }
    };
    let (report, opt) = result?;
    if model.base_digest() != before {
        return Err(TrainError::BaseDrift(task));
    }
    model.stage_completed = model.stage_completed.max(3);
    Ok((report, opt))
}

/// Fraction of masked positions whose argmax prediction is the original token.
pub fn mlm_accuracy(
    model: &EncoderModel,
    vocab: &Vocab,
    texts: &[String],
    seq_len: usize,
    ratio: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = vocab.len().min(model.config().vocab_size);
    let (mut hit, mut total) = (0usize, 0usize);
    for t in texts {
        let mut ids = vocab.tokenize(t);
        ids.truncate(seq_len);
        if ids.is_empty() {
            continue;
        }
        let m = whole_word_mask(&ids, ratio, words, &mut rng)?;
        if m.positions.is_empty() {
            continue;
        }
        let tb = TokenBatch::from_sequences(&[m.corrupted], seq_len);
        let mut g = Graph::new();
        let mut bind = Bindings::new(model, Trainable::Nothing);
        let states = model.forward(&mut g, &mut bind, &tb, None, model.config().rope_base_train)?;
        let picked = g.gather_rows(states, &m.positions)?;
        let logits = model.mlm_logits(&mut g, &mut bind, picked)?;
        let v: &Tensor = g.value(logits);
        let (_, cols) = v.dims2()?;
        for (r, &target) in m.targets.iter().enumerate() {
            let row = &v.data()[r * cols..(r + 1) * cols];
            // only real words compete; specials are never targets
            let best = (NUM_SPECIALS..words)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            hit += usize::from(best == target);
            total += 1;
        }
    }
    if total == 0 {
        return Err(DataError::InvalidArgument("no masked positions to score".into()).into());
    }
    Ok(hit as f64 / total as f64)
}
