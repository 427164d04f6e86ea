use std::path::Path;

use mtembed::data::toy::{ToySpec, FILLERS, TOPICS};
use mtembed::data::LabeledRecord;
use mtembed::pipeline::{prepare_toy_corpus, pretrain, train_pairs, RunConfig, ToyFiles};
use mtembed::trainer::Checkpoint;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// Writes and prepares the toy corpus in `dir` and loads its config.
pub fn prepare_toy(dir: &Path, seed: u64) -> (RunConfig, ToyFiles) {
    let files = prepare_toy_corpus(
        dir,
        &ToySpec {
            seed,
            ..ToySpec::default()
        },
    )
    .unwrap();
    (RunConfig::load(&files.config).unwrap(), files)
}

/// Toy corpus plus a checkpoint that has completed stages I and II.
pub fn stage2_checkpoint(dir: &Path, seed: u64) -> (RunConfig, ToyFiles, Checkpoint) {
    let (cfg, files) = prepare_toy(dir, seed);
    let (ck, _) = pretrain(&cfg).unwrap();
    let (ck, _) = train_pairs(&cfg, ck).unwrap();
    (cfg, files, ck)
}

/// Three classes told apart only by which filler words a text uses. Topic
/// words are drawn at random, so pair training has no reason to encode the
/// class.
pub fn filler_classes(seed: u64, per_class: usize) -> Vec<LabeledRecord> {
    let mut r = super::rng(seed);
    let groups = [&FILLERS[0..4], &FILLERS[4..8], &FILLERS[8..12]];
    let mut out = Vec::new();
    for _ in 0..per_class {
        for (c, group) in groups.iter().enumerate() {
            let topic = &TOPICS[r.random_range(0..TOPICS.len())];
            let mut words: Vec<&str> = topic
                .doc_words
                .choose_multiple(&mut r, 3)
                .copied()
                .collect();
            words.extend(group.choose_multiple(&mut r, 2).copied());
            words.shuffle(&mut r);
            out.push(LabeledRecord {
                text: words.join(" "),
                label: format!("c{c}"),
                dataset: "fillers".into(),
            });
        }
    }
    out
}
