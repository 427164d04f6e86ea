mod common;

use common::pipeline::prepare_toy;
use mtembed::data::{read_jsonl_file, write_jsonl_file, FailureKind, TemplateBank, TupleRecord};
use mtembed::evaluation::AdapterMode;
use mtembed::pipeline::{
    failure_report, gen_failures, pretrain, train_adapter, train_pairs, RunConfig,
};
use mtembed::task::TaskKind;

#[test]
fn f1_adapter_beats_stage2() {
    let dir = tempfile::tempdir().unwrap();
    let (_, files) = prepare_toy(dir.path(), 21);
    let bank = TemplateBank::builtin();
    let train = gen_failures(FailureKind::F1, 200, &bank, 1).unwrap();
    let test = gen_failures(FailureKind::F1, 60, &bank, 2).unwrap();
    let mut tuples: Vec<TupleRecord> =
        read_jsonl_file(&dir.path().join("retrieval_tuples.jsonl")).unwrap();
    tuples.extend(train.iter().map(|r| TupleRecord {
        q: r.query.clone(),
        p: r.gold.clone(),
        negs: r.distractors.clone(),
        dataset: "f1".into(),
    }));
    write_jsonl_file(&dir.path().join("retrieval_tuples.jsonl"), &tuples).unwrap();
    let cfg = RunConfig::load(&files.config).unwrap();
    let (ck, _) = pretrain(&cfg).unwrap();
    let (ck2, _) = train_pairs(&cfg, ck).unwrap();
    let (ck3, _) = train_adapter(&cfg, ck2.clone(), TaskKind::RetrievalQuery).unwrap();
    let before = failure_report(&ck2, AdapterMode::None, false, &test, 32)
        .unwrap()
        .kinds[&FailureKind::F1]
        .map;
    let after = failure_report(&ck3, AdapterMode::Separate, false, &test, 32)
        .unwrap()
        .kinds[&FailureKind::F1]
        .map;
    assert!(after > before, "F1 mAP {before} -> {after}");
}

#[test]
fn run_config_requires_seed_and_known_fields() {
    let cfg = mtembed::pipeline::toy_run_config(3);
    let mut value = serde_json::to_value(&cfg).unwrap();
    assert!(RunConfig::from_json(&value.to_string()).is_ok());
    value.as_object_mut().unwrap().remove("seed");
    let err = RunConfig::from_json(&value.to_string()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("seed"), "{err}");
    let mut extra = serde_json::to_value(&cfg).unwrap();
    extra["surprise"] = serde_json::json!(1);
    assert!(RunConfig::from_json(&extra.to_string()).is_err());
}

#[test]
fn stage_seeds_are_derived_from_the_run_seed() {
    let a = RunConfig::from_json(
        &serde_json::to_string(&mtembed::pipeline::toy_run_config(3)).unwrap(),
    )
    .unwrap();
    let b = RunConfig::from_json(
        &serde_json::to_string(&mtembed::pipeline::toy_run_config(4)).unwrap(),
    )
    .unwrap();
    assert_eq!(a.model.seed, 3);
    let seeds: std::collections::BTreeSet<u64> = a.stages.iter().map(|p| p.seed).collect();
    assert_eq!(seeds.len(), a.stages.len());
    assert!(a
        .stages
        .iter()
        .zip(&b.stages)
        .all(|(x, y)| x.seed != y.seed));
}

#[test]
fn toy_corpus_is_reproducible() {
    let read_all = |dir: &std::path::Path| {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    prepare_toy(a.path(), 9);
    prepare_toy(b.path(), 9);
    assert_eq!(read_all(a.path()), read_all(b.path()));
}

#[test]
fn passage_encoding_falls_back_to_the_shared_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, files) = prepare_toy(dir.path(), 22);
    for plan in &mut cfg.stages {
        plan.phases
            .iter_mut()
            .for_each(|p| p.steps = p.steps.min(5));
        plan.warmup_steps = 0;
        if plan.task == Some(TaskKind::RetrievalQuery) {
            plan.shared_retrieval_adapter = true;
        }
    }
    let (ck, _) = pretrain(&cfg).unwrap();
    let (ck, _) = train_pairs(&cfg, ck).unwrap();
    let docs: Vec<mtembed::data::TextRecord> = read_jsonl_file(&files.get("docs")).unwrap();
    let err =
        mtembed::pipeline::encode_records(&ck, &docs, Some(TaskKind::RetrievalQuery), 8, false)
            .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let (ck, _) = train_adapter(&cfg, ck, TaskKind::RetrievalQuery).unwrap();
    assert_eq!(ck.model.adapter_tasks(), vec![TaskKind::RetrievalQuery]);
    let q = mtembed::pipeline::encode_records(&ck, &docs, Some(TaskKind::RetrievalQuery), 8, false)
        .unwrap();
    let p =
        mtembed::pipeline::encode_records(&ck, &docs, Some(TaskKind::RetrievalPassage), 8, false)
            .unwrap();
    assert_eq!(q, p);
    let prefixed =
        mtembed::pipeline::encode_records(&ck, &docs, Some(TaskKind::RetrievalPassage), 8, true)
            .unwrap();
    assert_ne!(p, prefixed);
}
