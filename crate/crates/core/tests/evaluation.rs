mod common;

use std::collections::BTreeMap;

use common::oracles;
use common::ranking::{doc_ids, random_instance, rels_map};
use mtembed::data::tokenizer::Vocab;
use mtembed::data::{FailureKind, FailureRecord, QrelRecord, TextRecord};
use mtembed::encoder::EncoderModel;
use mtembed::evaluation::{
    adapter_ablation, average_precision, eval_retrieval, failure_eval, kmeans, logistic_probe,
    ndcg_at_k, qrels_from_records, spearman, v_measure, AblationVariant, AdapterMode, Embedder,
    EvalError, EvalReport,
};
use mtembed::task::TaskKind;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn ndcg_matches_reference() {
    let mut r = common::rng(1);
    for _ in 0..100 {
        let (ranking, rels) = random_instance(&mut r);
        let ids = doc_ids(rels.len());
        let names: Vec<&str> = ranking.iter().map(|&i| ids[i].as_str()).collect();
        let got = ndcg_at_k(&names, &rels_map(&ids, &rels), 10).unwrap();
        let want = oracles::ndcg(&ranking, &|d| rels[d], &rels, 10);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn average_precision_matches_reference() {
    let mut r = common::rng(2);
    for _ in 0..100 {
        let (ranking, rels) = random_instance(&mut r);
        let ids = doc_ids(rels.len());
        let names: Vec<&str> = ranking.iter().map(|&i| ids[i].as_str()).collect();
        let got = average_precision(&names, &rels_map(&ids, &rels)).unwrap();
        let want = oracles::average_precision(&ranking, &|d| rels[d] > 0.0);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn spearman_matches_reference() {
    let mut r = common::rng(3);
    for _ in 0..100 {
        let n = r.random_range(3..=20);
        // small integer values force ties
        let x: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..6u8))).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let want = oracles::spearman(&x, &y);
        match spearman(&x, &y) {
            Ok(got) => assert!((got - want).abs() < 1e-12, "{got} vs {want}"),
            Err(EvalError::ConstantInput) => assert!(want.is_nan()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn v_measure_matches_reference() {
    let mut r = common::rng(4);
    for _ in 0..100 {
        let n = r.random_range(2..=30);
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let gold: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let got = v_measure(&pred, &gold).unwrap();
        let want = oracles::v_measure(&pred, &gold);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn closed_form_anchors() {
    let ids = doc_ids(4);
    let one = BTreeMap::from([("d0".to_string(), 1.0)]);
    assert_eq!(ndcg_at_k(&["d0", "d1", "d2"], &one, 10), Some(1.0));
    let second = ndcg_at_k(&["d1", "d0", "d2"], &one, 10).unwrap();
    assert!((second - 1.0 / 3f64.log2()).abs() < 1e-12);
    assert!((second - 0.6309).abs() < 1e-4);
    let two = rels_map(&ids, &[1.0, 0.0, 1.0, 0.0]);
    let ap = average_precision(&["d0", "d1", "d2", "d3"], &two).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
    assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
    assert!(matches!(
        spearman(&x, &[2.0; 5]),
        Err(EvalError::ConstantInput)
    ));
    let gold_last: Vec<String> = (1..=8).map(|i| format!("d{}", i % 8)).collect();
    let refs: Vec<&str> = gold_last.iter().map(String::as_str).collect();
    assert_eq!(average_precision(&refs, &one), Some(1.0 / 8.0));
    assert_eq!(ndcg_at_k(&refs, &BTreeMap::new(), 10), None);
}

proptest! {
    #[test]
    fn ranking_metrics_ignore_doc_names(seed in any::<u64>(), salt in 1usize..1000) {
        let mut r = common::rng(seed);
        let (ranking, rels) = random_instance(&mut r);
        let a = doc_ids(rels.len());
        let b: Vec<String> = (0..rels.len()).map(|i| format!("x{}", (i * 7919 + salt) % 100_003)).collect();
        let rank_a: Vec<&str> = ranking.iter().map(|&i| a[i].as_str()).collect();
        let rank_b: Vec<&str> = ranking.iter().map(|&i| b[i].as_str()).collect();
        prop_assert_eq!(ndcg_at_k(&rank_a, &rels_map(&a, &rels), 10), ndcg_at_k(&rank_b, &rels_map(&b, &rels), 10));
        prop_assert_eq!(average_precision(&rank_a, &rels_map(&a, &rels)), average_precision(&rank_b, &rels_map(&b, &rels)));
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec(-5.0f64..5.0, 3..30), seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let ys: Vec<f64> = xs.iter().map(|_| r.random_range(-1.0..1.0)).collect();
        let fx: Vec<f64> = xs.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        let gy: Vec<f64> = ys.iter().map(|y| y.powi(3)).collect();
        match (spearman(&xs, &ys), spearman(&fx, &gy)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a.ok(), b.ok()),
        }
    }

    #[test]
    fn v_measure_ignores_cluster_names(labels in prop::collection::vec((0usize..4, 0usize..4), 2..40), shift in 1usize..4) {
        let pred: Vec<usize> = labels.iter().map(|l| l.0).collect();
        let gold: Vec<usize> = labels.iter().map(|l| l.1).collect();
        let renamed: Vec<String> = pred.iter().map(|p| format!("c{}", (p + shift) % 4)).collect();
        let a = v_measure(&pred, &gold).unwrap();
        let b = v_measure(&renamed, &gold).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }
}

#[test]
fn kmeans_recovers_separated_blobs() {
    for trial in 0..50u64 {
        let mut r = common::rng(100 + trial);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut points = Vec::new();
        let mut gold = Vec::new();
        for (c, center) in [[-5.0, 0.0, 2.0], [5.0, 1.0, -2.0]].iter().enumerate() {
            for _ in 0..20 {
                points.push(
                    center
                        .iter()
                        .map(|x| x + noise.sample(&mut r))
                        .collect::<Vec<f64>>(),
                );
                gold.push(c);
            }
        }
        let pred = kmeans(&points, 2, trial).unwrap();
        assert_eq!(v_measure(&pred, &gold).unwrap(), 1.0, "trial {trial}");
    }
}

#[test]
fn probe_on_random_labels_is_near_chance() {
    let mut r = common::rng(5);
    let mut sample = |n: usize| -> (Vec<Vec<f64>>, Vec<String>) {
        let x = common::random_rows(&mut r, n, 8);
        let y = (0..n)
            .map(|_| if r.random_bool(0.5) { "a" } else { "b" }.to_string())
            .collect();
        (x, y)
    };
    let (tx, ty) = sample(400);
    let (ex, ey) = sample(2000);
    let acc = logistic_probe(&tx, &ty, &ex, &ey).unwrap().accuracy;
    assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
}

#[test]
fn probe_separates_linear_classes_and_counts_unseen() {
    let mut r = common::rng(6);
    let rows = common::random_rows(&mut r, 200, 4);
    let labels: Vec<String> = rows
        .iter()
        .map(|x| if x[0] + x[1] > 0.0 { "pos" } else { "neg" }.into())
        .collect();
    let (train, test) = rows.split_at(150);
    let (ty, ey) = labels.split_at(150);
    let mut ey = ey.to_vec();
    ey[0] = "other".into();
    let res = logistic_probe(train, ty, test, &ey).unwrap();
    assert_eq!(res.unseen, 1);
    assert!(res.accuracy > 0.9, "accuracy {}", res.accuracy);
}

fn toy_model(seed: u64) -> (EncoderModel, Vocab) {
    let mut cfg = common::encoder::small_config(seed);
    cfg.vocab_size = 64;
    let mut m = EncoderModel::new(cfg).unwrap();
    m.add_adapter(TaskKind::RetrievalQuery);
    m.add_adapter(TaskKind::RetrievalPassage);
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let required: Vec<String> = TaskKind::ALL
        .iter()
        .filter_map(|t| t.instruction_prefix())
        .map(String::from)
        .collect();
    let required: Vec<&str> = required.iter().map(String::as_str).collect();
    let vocab = Vocab::build(words.iter().map(String::as_str), &required, 64);
    (m, vocab)
}

fn toy_retrieval() -> (Vec<TextRecord>, Vec<TextRecord>, Vec<QrelRecord>) {
    let text = |id: String, t: String| TextRecord { id, text: t };
    let queries: Vec<TextRecord> = (0..6)
        .map(|i| text(format!("q{i}"), format!("w{} w{}", i, i + 10)))
        .collect();
    let docs: Vec<TextRecord> = (0..12)
        .map(|i| text(format!("d{i}"), format!("w{} w{} w{}", i, i + 1, i + 20)))
        .collect();
    let qrels = (0..6)
        .map(|i| QrelRecord {
            qid: format!("q{i}"),
            did: format!("d{i}"),
            rel: 1.0,
        })
        .collect();
    (queries, docs, qrels)
}

#[test]
fn ablation_averages_and_identical_control() {
    let (m, v) = toy_model(1);
    let (queries, docs, qrel_records) = toy_retrieval();
    let qrels = qrels_from_records(&qrel_records).unwrap();
    let variants: Vec<AblationVariant> =
        [(false, false), (false, true), (true, false), (true, true)]
            .into_iter()
            .map(|(two, instr)| AblationVariant {
                two_adapters: two,
                instructions: instr,
                model: &m,
                vocab: &v,
            })
            .collect();
    let rep = adapter_ablation(&variants, &queries, &docs, &qrels, 16, 10).unwrap();
    let cell = |two: bool, instr: bool| {
        rep.cells
            .iter()
            .find(|c| c.two_adapters == two && c.instructions == instr)
            .unwrap()
            .ndcg
    };
    let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    close(
        rep.one_adapter_avg,
        (cell(false, false) + cell(false, true)) / 2.0,
    );
    close(
        rep.two_adapters_avg,
        (cell(true, false) + cell(true, true)) / 2.0,
    );
    close(
        rep.without_instructions_avg,
        (cell(false, false) + cell(true, false)) / 2.0,
    );
    close(
        rep.with_instructions_avg,
        (cell(false, true) + cell(true, true)) / 2.0,
    );
    assert!(rep.to_table().contains("2 adapters"));
    // fresh adapters are exact no-ops, so one model in every cell gives one score per instruction setting
    assert_eq!(cell(false, false), cell(true, false));
    assert_eq!(cell(false, true), cell(true, true));
    let err = adapter_ablation(&variants[..3], &queries, &docs, &qrels, 16, 10).unwrap_err();
    assert!(matches!(err, EvalError::MissingVariant(_)));
}

#[test]
fn retrieval_rejects_unknown_qrel_ids() {
    let (m, v) = toy_model(2);
    let (queries, docs, mut qrel_records) = toy_retrieval();
    qrel_records[0].did = "missing".into();
    let qrels = qrels_from_records(&qrel_records).unwrap();
    let emb = Embedder::new(&m, &v, 16, false);
    assert!(eval_retrieval(&emb, AdapterMode::None, &queries, &docs, &qrels, 10).is_err());
}

#[test]
fn failure_eval_gold_last_gives_one_eighth() {
    let (m, v) = toy_model(3);
    let records: Vec<FailureRecord> = (0..5)
        .map(|i| FailureRecord {
            kind: FailureKind::F2,
            query: format!("w{i} w{}", i + 1),
            gold: format!("w{} w{}", i + 30, i + 20),
            // identical to the query, so every distractor outranks the gold
            distractors: vec![format!("w{i} w{}", i + 1); 7],
        })
        .collect();
    let emb = Embedder::new(&m, &v, 16, false);
    let rep = failure_eval(&emb, AdapterMode::None, &records).unwrap();
    let s = &rep.kinds[&FailureKind::F2];
    assert_eq!(s.cases, 5);
    assert!((s.map - 1.0 / 8.0).abs() < 1e-12, "mAP {}", s.map);
    let json = serde_json::to_value(&rep).unwrap();
    assert!(json["kinds"]["f2"]["map"].is_number());
}

#[test]
fn report_validation_rejects_out_of_range_metrics() {
    let mut r = EvalReport {
        run_id: "r".into(),
        task: "sts".into(),
        adapters: mtembed::evaluation::AdapterConfig {
            tasks: vec![],
            instructions: false,
        },
        mrl_dim: 8,
        metrics: BTreeMap::from([("spearman".to_string(), -0.5)]),
        counts: BTreeMap::new(),
        seed: 1,
        timestamp: None,
    };
    assert!(r.validate().is_ok());
    r.metrics.insert("ndcg@10".into(), 1.5);
    assert!(r.validate().is_err());
    r.metrics.insert("ndcg@10".into(), f64::NAN);
    assert!(r.validate().is_err());
}
