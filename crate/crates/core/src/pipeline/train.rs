use crate::data::tokenizer::Vocab;
use crate::data::{
    read_jsonl_file, unique_id, LabeledRecord, PairRecord, ScoredPairRecord, TextRecord,
    TupleRecord,
};
use crate::encoder::EncoderModel;
use crate::task::TaskKind;
use crate::trainer::{
    run_stage1, run_stage2, run_stage3, AdapterData, Checkpoint, Stage, StageReport,
};

use super::{PipelineError, RunConfig};

fn adapter_texts(task: TaskKind, path: &std::path::Path) -> Result<Vec<String>, PipelineError> {
    Ok(match task {
        TaskKind::TextMatching => read_jsonl_file::<ScoredPairRecord>(path)?
            .into_iter()
            .flat_map(|r| [r.q, r.p])
            .collect(),
        TaskKind::Separation => read_jsonl_file::<LabeledRecord>(path)?
            .into_iter()
            .map(|r| r.text)
            .collect(),
        _ => read_jsonl_file::<TupleRecord>(path)?
            .into_iter()
            .flat_map(|r| [r.q, r.p].into_iter().chain(r.negs))
            .collect(),
    })
}

/// Vocabulary over every configured training text plus the instruction
/// words and the unique-ID tokens classification batches append.
pub fn build_vocab(cfg: &RunConfig) -> Result<Vocab, PipelineError> {
    let mut texts: Vec<String> = Vec::new();
    if let Some(p) = &cfg.data.mlm {
        texts.extend(
            read_jsonl_file::<TextRecord>(p)?
                .into_iter()
                .map(|r| r.text),
        );
    }
    for p in cfg.data.pairs.iter().chain(&cfg.data.separation_pairs) {
        texts.extend(
            read_jsonl_file::<PairRecord>(p)?
                .into_iter()
                .flat_map(|r| [r.q, r.p]),
        );
    }
    for (key, p) in &cfg.data.adapters {
        let task = if key == "retrieval" {
            TaskKind::RetrievalQuery
        } else {
            key.parse().expect("validated key")
        };
        texts.extend(adapter_texts(task, p)?);
    }
    let mut required: Vec<String> = TaskKind::ALL
        .iter()
        .filter_map(|t| t.instruction_prefix())
        .map(String::from)
        .collect();
    let ids = cfg
        .stages
        .iter()
        .filter(|p| p.task == Some(TaskKind::Classification))
        .flat_map(|p| p.phases.iter().map(|ph| ph.batch_size))
        .max()
        .unwrap_or(0);
    required.extend((0..ids).map(unique_id));
    let required: Vec<&str> = required.iter().map(String::as_str).collect();
    Ok(Vocab::build(
        texts.iter().map(String::as_str),
        &required,
        cfg.model.vocab_size,
    ))
}

fn check_model(cfg: &RunConfig, ck: &Checkpoint) -> Result<(), PipelineError> {
    if ck.model.config() != &cfg.model {
        return Err(PipelineError::Config(
            "checkpoint model settings differ from the run config's model section".into(),
        ));
    }
    Ok(())
}

/// Fresh model, stage I.
pub fn pretrain(cfg: &RunConfig) -> Result<(Checkpoint, StageReport), PipelineError> {
    let plan = cfg.plan(Stage::Pretrain)?;
    let path = RunConfig::require(cfg.data.mlm.as_deref(), "mlm")?;
    let vocab = build_vocab(cfg)?;
    let texts: Vec<String> = read_jsonl_file::<TextRecord>(&path)?
        .into_iter()
        .map(|r| r.text)
        .collect();
    let mut model = EncoderModel::new(cfg.model.clone())?;
    let (report, opt) = run_stage1(&mut model, &vocab, &texts, plan)?;
    Ok((
        Checkpoint {
            model,
            vocab,
            optimizer: Some(opt),
            step: report.steps as u64,
            seed: cfg.seed,
        },
        report,
    ))
}

pub fn train_pairs(
    cfg: &RunConfig,
    mut ck: Checkpoint,
) -> Result<(Checkpoint, StageReport), PipelineError> {
    let plan = cfg.plan(Stage::Pairs)?;
    let path = RunConfig::require(cfg.data.pairs.as_deref(), "pairs")?;
    check_model(cfg, &ck)?;
    let pairs: Vec<PairRecord> = read_jsonl_file(&path)?;
    let (report, opt) = run_stage2(&mut ck.model, &ck.vocab, &pairs, plan)?;
    ck.optimizer = Some(opt);
    ck.step += report.steps as u64;
    Ok((ck, report))
}

pub fn train_adapter(
    cfg: &RunConfig,
    mut ck: Checkpoint,
    task: TaskKind,
) -> Result<(Checkpoint, StageReport), PipelineError> {
    let plan = cfg.adapter_plan(task)?;
    let path = RunConfig::require(Some(cfg.adapter_data(task)?), &format!("adapters.{task}"))?;
    check_model(cfg, &ck)?;
    let data = match task {
        TaskKind::Classification => AdapterData::Classification(read_jsonl_file(&path)?),
        TaskKind::TextMatching => AdapterData::TextMatching(read_jsonl_file(&path)?),
        TaskKind::RetrievalQuery | TaskKind::RetrievalPassage => {
            AdapterData::Retrieval(read_jsonl_file(&path)?)
        }
        TaskKind::Separation => {
            let pairs = if plan.mix_pairs {
                let p = RunConfig::require(
                    cfg.data
                        .separation_pairs
                        .as_deref()
                        .or(cfg.data.pairs.as_deref()),
                    "separation_pairs",
                )?;
                read_jsonl_file(&p)?
            } else {
                Vec::new()
            };
            AdapterData::Separation {
                labeled: read_jsonl_file(&path)?,
                pairs,
            }
        }
    };
    let (report, opt) = run_stage3(&mut ck.model, &ck.vocab, &data, plan)?;
    ck.optimizer = Some(opt);
    ck.step += report.steps as u64;
    Ok((ck, report))
}
