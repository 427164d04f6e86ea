use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::toy::{ToyCorpus, ToySpec};
use crate::data::{
    build_class_tuples, convert_quality_threads, gen_failure_case, mine_hard_negatives,
    overlap_filter, read_jsonl_file, write_jsonl_file, Bm25Index, DataError, FailureKind,
    FailureRecord, FilterDecision, LabeledRecord, PairRecord, QualityConversion, QualityThread,
    TemplateBank, TextRecord, TupleRecord, MASK_RATIO,
};
use crate::encoder::ModelConfig;
use crate::task::TaskKind;
use crate::trainer::{MrlSettings, Phase, Stage, StagePlan};

use super::{io_error, write_json, DataPaths, EvalSettings, PipelineError, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub kept: usize,
    pub dropped: usize,
    /// Per dataset: (kept, dropped).
    pub per_dataset: BTreeMap<String, (usize, usize)>,
}

pub fn filter_pairs(pairs: &[PairRecord]) -> (Vec<PairRecord>, FilterSummary) {
    let mut kept = Vec::new();
    let mut per_dataset: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for p in pairs {
        let e = per_dataset.entry(p.dataset.clone()).or_default();
        match overlap_filter(p) {
            FilterDecision::Keep => {
                e.0 += 1;
                kept.push(p.clone());
            }
            FilterDecision::Drop => e.1 += 1,
        }
    }
    let summary = FilterSummary {
        kept: kept.len(),
        dropped: pairs.len() - kept.len(),
        per_dataset,
    };
    (kept, summary)
}

/// BM25 hard negatives for every pair, mined from `corpus`.
pub fn mine_negatives(
    pairs: &[PairRecord],
    corpus: &[TextRecord],
    per_pair: usize,
    seed: u64,
) -> Result<Vec<TupleRecord>, PipelineError> {
    let texts: Vec<&str> = corpus.iter().map(|r| r.text.as_str()).collect();
    let index = Bm25Index::new(&texts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs
        .iter()
        .map(|p| {
            Ok(mine_hard_negatives(
                &p.q, &p.p, &texts, &index, per_pair, &p.dataset, &mut rng,
            )?)
        })
        .collect()
}

pub fn class_tuples(
    labeled: &[LabeledRecord],
    seed: u64,
) -> Result<Vec<TupleRecord>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tuples = build_class_tuples(labeled, &mut rng)?;
    if tuples.is_empty() {
        return Err(DataError::NoTuples("no class has two members".into()).into());
    }
    Ok(tuples)
}

pub fn quality_convert(threads: &[QualityThread], dataset: &str, seed: u64) -> QualityConversion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    convert_quality_threads(threads, dataset, &mut rng)
}

pub fn gen_failures(
    kind: FailureKind,
    n: usize,
    bank: &TemplateBank,
    seed: u64,
) -> Result<Vec<FailureRecord>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gen_failure_case(kind, n, bank, &mut rng)?)
}

/// Paths written by [`write_toy_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFiles {
    pub dir: PathBuf,
    pub files: BTreeMap<String, PathBuf>,
    pub config: PathBuf,
}

impl ToyFiles {
    pub fn get(&self, name: &str) -> PathBuf {
        self.files[name].clone()
    }
}

fn phase(steps: usize, batch_size: usize, seq_len: usize) -> Phase {
    Phase {
        steps,
        batch_size,
        seq_len,
        temperature: None,
        min_tokens: 0,
    }
}

fn plan(
    stage: Stage,
    task: Option<TaskKind>,
    phases: Vec<Phase>,
    max_lr: f64,
    mrl: bool,
) -> StagePlan {
    let total: usize = phases.iter().map(|p| p.steps).sum();
    StagePlan {
        stage,
        phases,
        max_lr,
        warmup_steps: total / 10,
        task,
        mrl: mrl.then(|| MrlSettings {
            dims: vec![4, 8, 16, 32],
            weights: None,
        }),
        mask_ratio: MASK_RATIO,
        instructions: false,
        shared_retrieval_adapter: false,
        mix_pairs: task == Some(TaskKind::Separation),
        seed: 0,
    }
}

/// Run configuration for the toy corpus, with paths relative to its directory.
pub fn toy_run_config(seed: u64) -> RunConfig {
    let mut long = phase(100, 8, 12);
    long.min_tokens = 6;
    let adapters = [
        ("retrieval", "retrieval_tuples.jsonl"),
        ("classification", "class_tuples.jsonl"),
        ("text-matching", "scored_train.jsonl"),
        ("separation", "labeled_train.jsonl"),
    ];
    RunConfig {
        seed,
        model: ModelConfig {
            vocab_size: 512,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ff: 64,
            max_seq_len: 16,
            mrl_dims: vec![4, 8, 16, 32],
            ..ModelConfig::default()
        },
        stages: vec![
            plan(
                Stage::Pretrain,
                None,
                vec![phase(60, 16, 8), phase(20, 8, 16)],
                1e-3,
                false,
            ),
            plan(
                Stage::Pairs,
                None,
                vec![phase(200, 16, 8), long],
                3e-3,
                true,
            ),
            plan(
                Stage::Adapter,
                Some(TaskKind::RetrievalQuery),
                vec![phase(150, 8, 12)],
                3e-3,
                true,
            ),
            plan(
                Stage::Adapter,
                Some(TaskKind::Classification),
                vec![phase(100, 8, 16)],
                3e-3,
                false,
            ),
            plan(
                Stage::Adapter,
                Some(TaskKind::TextMatching),
                vec![phase(100, 16, 12)],
                3e-3,
                false,
            ),
            plan(
                Stage::Adapter,
                Some(TaskKind::Separation),
                vec![phase(100, 16, 12)],
                3e-3,
                false,
            ),
        ],
        data: DataPaths {
            mlm: Some("mlm.jsonl".into()),
            pairs: Some("pairs.filtered.jsonl".into()),
            adapters: adapters
                .iter()
                .map(|(k, v)| (k.to_string(), PathBuf::from(v)))
                .collect(),
            separation_pairs: None,
        },
        eval: EvalSettings::default(),
        output_dir: Some("out".into()),
    }
}

/// Writes the generated toy corpus as JSONL files plus a `run.json` for it.
pub fn write_toy_corpus(dir: &Path, spec: &ToySpec) -> Result<ToyFiles, PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let c = ToyCorpus::generate(spec);
    let mut files = BTreeMap::new();
    let mut put = |name: &str| -> PathBuf {
        let p = dir.join(format!("{name}.jsonl"));
        files.insert(name.to_string(), p.clone());
        p
    };
    write_jsonl_file(&put("docs"), &c.docs)?;
    write_jsonl_file(&put("queries"), &c.queries)?;
    write_jsonl_file(&put("qrels"), &c.qrels)?;
    write_jsonl_file(&put("pairs"), &c.pairs)?;
    write_jsonl_file(&put("retrieval_pairs"), &c.retrieval_pairs)?;
    write_jsonl_file(&put("passages"), &c.passages)?;
    write_jsonl_file(&put("labeled_train"), &c.labeled_train)?;
    write_jsonl_file(&put("labeled_test"), &c.labeled_test)?;
    write_jsonl_file(&put("scored_train"), &c.scored_train)?;
    write_jsonl_file(&put("scored_test"), &c.scored_test)?;
    write_jsonl_file(&put("threads"), &c.threads)?;
    write_jsonl_file(&put("mlm"), &c.mlm)?;
    let config = dir.join("run.json");
    let mut value = serde_json::to_value(toy_run_config(spec.seed)).expect("config serializes");
    value["model"]
        .as_object_mut()
        .expect("object")
        .remove("seed");
    for plan in value["stages"].as_array_mut().expect("array") {
        plan.as_object_mut().expect("object").remove("seed");
    }
    write_json(&config, &value)?;
    Ok(ToyFiles {
        dir: dir.to_path_buf(),
        files,
        config,
    })
}

/// Negatives mined per retrieval pair for the toy corpus.
pub const TOY_NEGATIVES: usize = 3;

/// [`write_toy_corpus`] followed by the preparation steps its `run.json`
/// expects: filtered pairs, mined retrieval tuples and class tuples.
pub fn prepare_toy_corpus(dir: &Path, spec: &ToySpec) -> Result<ToyFiles, PipelineError> {
    let mut files = write_toy_corpus(dir, spec)?;
    let pairs: Vec<PairRecord> = read_jsonl_file(&files.get("pairs"))?;
    let (kept, _) = filter_pairs(&pairs);
    let mut put = |name: &str| -> PathBuf {
        let p = dir.join(format!("{name}.jsonl"));
        files.files.insert(name.to_string(), p.clone());
        p
    };
    write_jsonl_file(&put("pairs.filtered"), &kept)?;
    let rp: Vec<PairRecord> = read_jsonl_file(&dir.join("retrieval_pairs.jsonl"))?;
    let passages: Vec<TextRecord> = read_jsonl_file(&dir.join("passages.jsonl"))?;
    write_jsonl_file(
        &put("retrieval_tuples"),
        &mine_negatives(&rp, &passages, TOY_NEGATIVES, spec.seed)?,
    )?;
    let labeled: Vec<LabeledRecord> = read_jsonl_file(&dir.join("labeled_train.jsonl"))?;
    write_jsonl_file(&put("class_tuples"), &class_tuples(&labeled, spec.seed)?)?;
    Ok(files)
}
