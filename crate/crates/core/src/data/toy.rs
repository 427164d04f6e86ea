//! Synthetic topic corpus for end-to-end runs.
//!
//! Each topic has its own query words and its own document words, and the
//! two sets never overlap. Queries and documents share only topic-neutral
//! filler words. Lexical matching therefore cannot find relevant documents;
//! a model has to learn which query words go with which document words.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::{
    Answer, LabeledRecord, PairRecord, QrelRecord, QualityThread, ScoredPairRecord, TextRecord,
};

pub struct Topic {
    pub name: &'static str,
    pub query_words: [&'static str; 8],
    pub doc_words: [&'static str; 12],
}

pub const TOPICS: [Topic; 8] = [
    Topic {
        name: "astronomy",
        query_words: [
            "telescope",
            "stars",
            "planets",
            "orbit",
            "comet",
            "galaxy",
            "moon",
            "eclipse",
        ],
        doc_words: [
            "nebula",
            "lightyear",
            "astronomer",
            "observatory",
            "cosmos",
            "meteor",
            "supernova",
            "constellation",
            "asteroid",
            "spectrum",
            "quasar",
            "solar",
        ],
    },
    Topic {
        name: "cooking",
        query_words: [
            "recipe", "bake", "oven", "flour", "spice", "boil", "dinner", "kitchen",
        ],
        doc_words: [
            "saucepan",
            "simmer",
            "dough",
            "garlic",
            "roast",
            "chef",
            "seasoning",
            "skillet",
            "marinade",
            "broth",
            "knead",
            "whisk",
        ],
    },
    Topic {
        name: "gardening",
        query_words: [
            "plant", "seeds", "soil", "flowers", "garden", "prune", "weeds", "compost",
        ],
        doc_words: [
            "tulip",
            "mulch",
            "fertilizer",
            "shovel",
            "greenhouse",
            "bulbs",
            "hedge",
            "sprout",
            "trellis",
            "perennial",
            "watering",
            "rake",
        ],
    },
    Topic {
        name: "finance",
        query_words: [
            "money", "invest", "stocks", "savings", "loan", "budget", "tax", "bank",
        ],
        doc_words: [
            "dividend",
            "portfolio",
            "interest",
            "mortgage",
            "equity",
            "bond",
            "inflation",
            "broker",
            "ledger",
            "revenue",
            "credit",
            "audit",
        ],
    },
    Topic {
        name: "music",
        query_words: [
            "guitar", "song", "melody", "piano", "band", "concert", "rhythm", "lyrics",
        ],
        doc_words: [
            "chord",
            "tempo",
            "orchestra",
            "violin",
            "harmony",
            "drummer",
            "symphony",
            "chorus",
            "album",
            "tuning",
            "octave",
            "composer",
        ],
    },
    Topic {
        name: "medicine",
        query_words: [
            "doctor", "fever", "pain", "vaccine", "clinic", "illness", "cough", "medicine",
        ],
        doc_words: [
            "diagnosis",
            "antibiotic",
            "nurse",
            "symptom",
            "therapy",
            "surgeon",
            "dosage",
            "prescription",
            "infection",
            "pulse",
            "immune",
            "patient",
        ],
    },
    Topic {
        name: "sailing",
        query_words: [
            "boat", "sail", "harbor", "wind", "anchor", "ocean", "captain", "tide",
        ],
        doc_words: [
            "hull",
            "mast",
            "rudder",
            "keel",
            "deck",
            "voyage",
            "starboard",
            "regatta",
            "knots",
            "buoy",
            "crew",
            "navigator",
        ],
    },
    Topic {
        name: "computing",
        query_words: [
            "computer", "software", "code", "laptop", "program", "internet", "bug", "server",
        ],
        doc_words: [
            "compiler",
            "algorithm",
            "database",
            "kernel",
            "processor",
            "memory",
            "network",
            "debugger",
            "script",
            "cache",
            "terminal",
            "bytes",
        ],
    },
];

pub const FILLERS: [&str; 12] = [
    "the", "a", "about", "with", "and", "of", "for", "some", "new", "good", "this", "more",
];

const QUERY_TOPIC_WORDS: usize = 3;
const DOC_TOPIC_WORDS: usize = 5;
const FILLER_WORDS: usize = 2;
pub const STS_SCALE: f64 = 5.0;

/// Sizes of the generated splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToySpec {
    pub seed: u64,
    pub eval_docs_per_topic: usize,
    pub eval_queries_per_topic: usize,
    pub train_pairs_per_topic: usize,
    pub passages_per_topic: usize,
    pub labeled_per_topic: usize,
    pub scored_pairs: usize,
    pub threads: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            seed: 0,
            eval_docs_per_topic: 8,
            eval_queries_per_topic: 4,
            train_pairs_per_topic: 48,
            passages_per_topic: 16,
            labeled_per_topic: 24,
            scored_pairs: 256,
            threads: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    /// Evaluation documents and queries with binary topic qrels.
    pub docs: Vec<TextRecord>,
    pub queries: Vec<TextRecord>,
    pub qrels: Vec<QrelRecord>,
    /// Pair-training data split across two datasets.
    pub pairs: Vec<PairRecord>,
    /// Query/passage pairs for adapter training and the passage pool to mine negatives from.
    pub retrieval_pairs: Vec<PairRecord>,
    pub passages: Vec<TextRecord>,
    pub labeled_train: Vec<LabeledRecord>,
    pub labeled_test: Vec<LabeledRecord>,
    pub scored_train: Vec<ScoredPairRecord>,
    pub scored_test: Vec<ScoredPairRecord>,
    pub threads: Vec<QualityThread>,
    /// Plain texts for masked-language-model pre-training.
    pub mlm: Vec<TextRecord>,
}

fn compose(rng: &mut ChaCha8Rng, pool: &[&str], n: usize) -> String {
    let mut words: Vec<&str> = pool.choose_multiple(rng, n).copied().collect();
    words.extend(FILLERS.choose_multiple(rng, FILLER_WORDS).copied());
    words.shuffle(rng);
    words.join(" ")
}

pub fn query_text(rng: &mut ChaCha8Rng, topic: usize) -> String {
    compose(rng, &TOPICS[topic].query_words, QUERY_TOPIC_WORDS)
}

pub fn doc_text(rng: &mut ChaCha8Rng, topic: usize) -> String {
    compose(rng, &TOPICS[topic].doc_words, DOC_TOPIC_WORDS)
}

/// A document built mostly from `topic` with two words of `other` mixed in.
fn mixed_doc(rng: &mut ChaCha8Rng, topic: usize, other: usize) -> String {
    let mut words: Vec<&str> = TOPICS[topic]
        .doc_words
        .choose_multiple(rng, 3)
        .copied()
        .collect();
    words.extend(TOPICS[other].doc_words.choose_multiple(rng, 2).copied());
    words.extend(FILLERS.choose_multiple(rng, FILLER_WORDS).copied());
    words.shuffle(rng);
    words.join(" ")
}

fn other_topic(rng: &mut ChaCha8Rng, topic: usize) -> usize {
    (topic + rng.random_range(1..TOPICS.len())) % TOPICS.len()
}

/// Every word the generator can emit.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&str> = FILLERS.to_vec();
    for t in &TOPICS {
        v.extend(t.query_words);
        v.extend(t.doc_words);
    }
    v
}

impl ToyCorpus {
    pub fn generate(spec: &ToySpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n_topics = TOPICS.len();

        let mut docs = Vec::new();
        let mut queries = Vec::new();
        let mut qrels = Vec::new();
        for t in 0..n_topics {
            for i in 0..spec.eval_docs_per_topic {
                docs.push(TextRecord {
                    id: format!("d{t}_{i}"),
                    text: doc_text(&mut rng, t),
                });
            }
        }
        for t in 0..n_topics {
            for i in 0..spec.eval_queries_per_topic {
                let qid = format!("q{t}_{i}");
                queries.push(TextRecord {
                    id: qid.clone(),
                    text: query_text(&mut rng, t),
                });
                for j in 0..spec.eval_docs_per_topic {
                    qrels.push(QrelRecord {
                        qid: qid.clone(),
                        did: format!("d{t}_{j}"),
                        rel: 1.0,
                    });
                }
            }
        }

        let mut pairs = Vec::new();
        for t in 0..n_topics {
            for i in 0..spec.train_pairs_per_topic {
                let dataset = if i % 2 == 0 { "toy-a" } else { "toy-b" };
                // toy-b pairs are document/document, toy-a query/document
                let q = if dataset == "toy-a" {
                    query_text(&mut rng, t)
                } else {
                    doc_text(&mut rng, t)
                };
                pairs.push(PairRecord {
                    q,
                    p: doc_text(&mut rng, t),
                    dataset: dataset.into(),
                });
            }
        }
        pairs.shuffle(&mut rng);

        let mut retrieval_pairs = Vec::new();
        for t in 0..n_topics {
            for _ in 0..spec.train_pairs_per_topic / 2 {
                retrieval_pairs.push(PairRecord {
                    q: query_text(&mut rng, t),
                    p: doc_text(&mut rng, t),
                    dataset: "toy-retrieval".into(),
                });
            }
        }
        retrieval_pairs.shuffle(&mut rng);
        let mut passages = Vec::new();
        for t in 0..n_topics {
            for i in 0..spec.passages_per_topic {
                passages.push(TextRecord {
                    id: format!("p{t}_{i}"),
                    text: doc_text(&mut rng, t),
                });
            }
        }

        let labeled = |rng: &mut ChaCha8Rng, split: &str| -> Vec<LabeledRecord> {
            let mut out = Vec::new();
            for (t, topic) in TOPICS.iter().enumerate() {
                for i in 0..spec.labeled_per_topic {
                    let text = if i % 2 == 0 {
                        doc_text(rng, t)
                    } else {
                        query_text(rng, t)
                    };
                    out.push(LabeledRecord {
                        text,
                        label: topic.name.into(),
                        dataset: format!("toy-topics-{split}"),
                    });
                }
            }
            out.shuffle(rng);
            out
        };
        let labeled_train = labeled(&mut rng, "train");
        let labeled_test = labeled(&mut rng, "test");

        let scored = |rng: &mut ChaCha8Rng| -> Vec<ScoredPairRecord> {
            (0..spec.scored_pairs)
                .map(|i| {
                    let t = rng.random_range(0..n_topics);
                    let q = doc_text(rng, t);
                    // three tiers: same topic, mixed, unrelated
                    let (p, score) = match i % 3 {
                        0 => (doc_text(rng, t), rng.random_range(4.0..=5.0)),
                        1 => {
                            let o = other_topic(rng, t);
                            (mixed_doc(rng, t, o), rng.random_range(2.0..3.5))
                        }
                        _ => {
                            let o = other_topic(rng, t);
                            (doc_text(rng, o), rng.random_range(0.0..1.0))
                        }
                    };
                    ScoredPairRecord {
                        q,
                        p,
                        score,
                        scale_max: STS_SCALE,
                    }
                })
                .collect()
        };
        let scored_train = scored(&mut rng);
        let scored_test = scored(&mut rng);

        let threads = (0..spec.threads)
            .map(|i| {
                let t = i % n_topics;
                let mut answers = vec![Answer {
                    text: doc_text(&mut rng, t),
                    score: rng.random_range(0.8..=1.0),
                }];
                // every fifth thread has a single answer and is skipped by conversion
                if i % 5 != 4 {
                    let o = other_topic(&mut rng, t);
                    answers.push(Answer {
                        text: mixed_doc(&mut rng, t, o),
                        score: rng.random_range(0.45..0.65),
                    });
                    for _ in 0..rng.random_range(1..=3) {
                        let o = other_topic(&mut rng, t);
                        answers.push(Answer {
                            text: doc_text(&mut rng, o),
                            score: rng.random_range(0.0..0.3),
                        });
                    }
                    answers.shuffle(&mut rng);
                }
                QualityThread {
                    query: query_text(&mut rng, t),
                    answers,
                }
            })
            .collect();

        let mut mlm: Vec<TextRecord> = Vec::new();
        for p in &pairs {
            for text in [&p.q, &p.p] {
                mlm.push(TextRecord {
                    id: format!("m{}", mlm.len()),
                    text: text.clone(),
                });
            }
        }

        Self {
            docs,
            queries,
            qrels,
            pairs,
            retrieval_pairs,
            passages,
            labeled_train,
            labeled_test,
            scored_train,
            scored_test,
            threads,
            mlm,
        }
    }

    /// Topic index of an evaluation document or query id.
    pub fn topic_of(id: &str) -> Option<usize> {
        id.get(1..)?.split('_').next()?.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn query_and_doc_words_are_disjoint() {
        let q: HashSet<&str> = TOPICS.iter().flat_map(|t| t.query_words).collect();
        let d: HashSet<&str> = TOPICS.iter().flat_map(|t| t.doc_words).collect();
        let f: HashSet<&str> = FILLERS.into_iter().collect();
        assert_eq!(q.len(), 64);
        assert_eq!(d.len(), 96);
        assert!(q.is_disjoint(&d) && q.is_disjoint(&f) && d.is_disjoint(&f));
    }

    #[test]
    fn default_sizes_and_determinism() {
        let spec = ToySpec::default();
        let c = ToyCorpus::generate(&spec);
        assert_eq!(c.docs.len(), 64);
        assert_eq!(c.queries.len(), 32);
        assert_eq!(c.qrels.len(), 32 * 8);
        assert_eq!(ToyCorpus::topic_of("q3_1"), Some(3));
        assert_eq!(c, ToyCorpus::generate(&spec));
        assert_ne!(
            c.docs,
            ToyCorpus::generate(&ToySpec { seed: 1, ..spec }).docs
        );
    }
}
