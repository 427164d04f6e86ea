//! Replays the fuzz corpus seeds through the same checks the fuzz targets
//! make, so the seeds stay valid as the formats evolve.

use std::fs;
use std::path::{Path, PathBuf};

use mtembed::data::tokenizer::{words, Vocab};
use mtembed::data::{
    gen_failure_case, read_jsonl, FailureKind, FailureRecord, LabeledRecord, PairRecord,
    QrelRecord, QualityThread, ScoredPairRecord, TemplateBank, TextRecord, TupleRecord,
};
use mtembed::encoder::{EncoderModel, ModelConfig};
use mtembed::pipeline::{read_embeddings_binary, write_embeddings_binary, RunConfig};
use mtembed::trainer::{read_checkpoint, write_checkpoint, StagePlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p: PathBuf| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn checkpoint_seeds() {
    for (name, data) in seeds("checkpoint") {
        match read_checkpoint(&data) {
            Ok(ck) => {
                let bytes = write_checkpoint(&ck);
                assert_eq!(bytes, data, "{name} does not re-encode to itself");
            }
            Err(_) => assert_eq!(name, "truncated"),
        }
    }
}

#[test]
fn embeddings_seeds() {
    for (name, data) in seeds("embeddings") {
        let rows = read_embeddings_binary(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(write_embeddings_binary(&rows), data);
    }
}

#[test]
fn jsonl_record_seeds() {
    for (name, data) in seeds("jsonl_records") {
        let (&kind, body) = data.split_first().unwrap();
        let ok = match kind % 8 {
            0 => read_jsonl::<TextRecord>(body).is_ok(),
            1 => read_jsonl::<PairRecord>(body).is_ok(),
            2 => read_jsonl::<TupleRecord>(body).is_ok(),
            3 => read_jsonl::<ScoredPairRecord>(body).is_ok(),
            4 => read_jsonl::<LabeledRecord>(body).is_ok(),
            5 => read_jsonl::<QualityThread>(body).is_ok(),
            6 => read_jsonl::<QrelRecord>(body).is_ok(),
            _ => read_jsonl::<FailureRecord>(body).is_ok(),
        };
        assert!(ok, "{name} does not parse");
    }
}

#[test]
fn config_seeds() {
    for (name, data) in seeds("config") {
        let (&kind, body) = data.split_first().unwrap();
        match kind % 3 {
            0 => {
                let cfg: ModelConfig = serde_json::from_slice(body).unwrap();
                EncoderModel::new(cfg).unwrap();
            }
            1 => {
                let plan: StagePlan = serde_json::from_slice(body).unwrap();
                let run = mtembed::pipeline::toy_run_config(0);
                plan.validate(&run.model)
                    .unwrap_or_else(|e| panic!("{name}: {e}"));
            }
            _ => {
                RunConfig::from_json(std::str::from_utf8(body).unwrap())
                    .unwrap_or_else(|e| panic!("{name}: {e}"));
            }
        }
    }
}

#[test]
fn template_bank_seeds() {
    for (name, data) in seeds("template_bank") {
        match TemplateBank::from_json(std::str::from_utf8(&data).unwrap()) {
            Ok(bank) => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                for kind in [FailureKind::F1, FailureKind::F2, FailureKind::F3] {
                    gen_failure_case(kind, 2, &bank, &mut rng).unwrap();
                }
            }
            Err(_) => assert_eq!(name, "minimal"),
        }
    }
}

#[test]
fn tokenizer_seeds() {
    for (_, data) in seeds("tokenizer") {
        let text = std::str::from_utf8(&data).unwrap();
        let vocab = Vocab::build([text], &[], 64);
        let ids = vocab.tokenize(text);
        assert!(ids.iter().all(|&i| i < vocab.len()));
        let back = vocab.detokenize(&ids);
        if words(text).all(|w| vocab.id(&w).is_some()) {
            assert_eq!(back, words(text).collect::<Vec<_>>().join(" "));
        } else {
            // special-token spellings in raw text are not ids
            assert!(back.contains("<unk>"));
        }
    }
}
