use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::records::{LabeledRecord, QualityThread, TupleRecord};
use super::DataError;

pub const CLASS_NEGATIVES: usize = 7;
pub const QUALITY_GAP: f64 = 0.3;
/// Slack for the quality gap so that e.g. 0.7 vs 0.4 counts as a 0.3 gap.
const GAP_EPS: f64 = 1e-9;

/// One tuple per record whose class has another member: `p` is a random
/// other member of the same class and seven negatives come from the other
/// classes of the same dataset, drawn with replacement only when fewer than
/// seven candidates exist.
pub fn build_class_tuples(
    labeled: &[LabeledRecord],
    rng: &mut impl Rng,
) -> Result<Vec<TupleRecord>, DataError> {
    let mut by_dataset: BTreeMap<&str, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for r in labeled {
        by_dataset
            .entry(&r.dataset)
            .or_default()
            .entry(&r.label)
            .or_default()
            .push(&r.text);
    }
    let mut out = Vec::new();
    for (dataset, classes) in &by_dataset {
        if classes.len() < 2 {
            continue;
        }
        for (label, members) in classes {
            if members.len() < 2 {
                continue;
            }
            let others: Vec<&str> = classes
                .iter()
                .filter(|(l, _)| *l != label)
                .flat_map(|(_, m)| m.iter().copied())
                .collect();
            for (i, q) in members.iter().enumerate() {
                let mut j = rng.random_range(0..members.len() - 1);
                if j >= i {
                    j += 1;
                }
                let negs: Vec<String> = if others.len() >= CLASS_NEGATIVES {
                    others
                        .choose_multiple(rng, CLASS_NEGATIVES)
                        .map(|s| s.to_string())
                        .collect()
                } else {
                    (0..CLASS_NEGATIVES)
                        .map(|_| {
                            others
                                .choose(rng)
                                .expect("another class exists")
                                .to_string()
                        })
                        .collect()
                };
                out.push(TupleRecord {
                    q: q.to_string(),
                    p: members[j].to_string(),
                    negs,
                    dataset: dataset.to_string(),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(DataError::NoTuples(
            "need a dataset with two classes and a class with two members".into(),
        ));
    }
    Ok(out)
}

/// The id string attached to the tuple at `index` within a batch.
pub fn unique_id(index: usize) -> String {
    format!("t{index:02}")
}

/// Appends ` id` to the query, positive and every negative.
pub fn append_unique_id(tuple: &TupleRecord, id: &str) -> TupleRecord {
    let tag = |s: &String| format!("{s} {id}");
    TupleRecord {
        q: tag(&tuple.q),
        p: tag(&tuple.p),
        negs: tuple.negs.iter().map(tag).collect(),
        dataset: tuple.dataset.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityConversion {
    pub tuples: Vec<TupleRecord>,
    /// Threads with fewer than two answers.
    pub skipped: usize,
    /// How many negatives of each tuple came from the thread itself.
    pub own_negatives: Vec<usize>,
}

/// Turns scored answer threads into tuples with exactly seven negatives.
///
/// The best answer (lowest index on ties) is the positive. Answers at least
/// 0.3 below it are negatives, lowest score first; the rest is padded with
/// random answers from other threads.
pub fn convert_quality_threads(
    threads: &[QualityThread],
    dataset: &str,
    rng: &mut impl Rng,
) -> QualityConversion {
    let mut out = QualityConversion {
        tuples: Vec::new(),
        skipped: 0,
        own_negatives: Vec::new(),
    };
    for (ti, thread) in threads.iter().enumerate() {
        if thread.answers.len() < 2 {
            out.skipped += 1;
            continue;
        }
        let mut best = 0;
        for (i, a) in thread.answers.iter().enumerate() {
            if a.score > thread.answers[best].score {
                best = i;
            }
        }
        let top = thread.answers[best].score;
        let mut own: Vec<usize> = (0..thread.answers.len())
            .filter(|&i| top - thread.answers[i].score >= QUALITY_GAP - GAP_EPS)
            .collect();
        own.sort_by(|&a, &b| {
            thread.answers[a]
                .score
                .total_cmp(&thread.answers[b].score)
                .then(a.cmp(&b))
        });
        own.truncate(CLASS_NEGATIVES);
        let mut negs: Vec<String> = own
            .iter()
            .map(|&i| thread.answers[i].text.clone())
            .collect();
        let pool: Vec<&str> = threads
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != ti)
            .flat_map(|(_, t)| t.answers.iter().map(|a| a.text.as_str()))
            .collect();
        if negs.len() < CLASS_NEGATIVES {
            if pool.is_empty() {
                if negs.is_empty() {
                    out.skipped += 1;
                    continue;
                }
                let own_count = negs.len();
                for k in 0..CLASS_NEGATIVES - own_count {
                    negs.push(negs[k % own_count].clone());
                }
            } else {
                let need = CLASS_NEGATIVES - negs.len();
                if pool.len() >= need {
                    negs.extend(pool.choose_multiple(rng, need).map(|s| s.to_string()));
                } else {
                    negs.extend((0..need).map(|_| pool.choose(rng).unwrap().to_string()));
                }
            }
        }
        out.own_negatives.push(own.len());
        out.tuples.push(TupleRecord {
            q: thread.query.clone(),
            p: thread.answers[best].text.clone(),
            negs,
            dataset: dataset.to_string(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records::Answer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn thread(query: &str, scores: &[f64]) -> QualityThread {
        QualityThread {
            query: query.into(),
            answers: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| Answer {
                    text: format!("{query}-a{i}"),
                    score: s,
                })
                .collect(),
        }
    }

    fn labeled(text: &str, label: &str) -> LabeledRecord {
        LabeledRecord {
            text: text.into(),
            label: label.into(),
            dataset: "d".into(),
        }
    }

    #[test]
    fn quality_worked_example() {
        let threads = vec![
            thread("main", &[0.9, 0.7, 0.55]),
            thread("x", &[0.1, 0.2, 0.3, 0.4]),
            thread("y", &[0.5, 0.6, 0.7, 0.8]),
            thread("lonely", &[1.0]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = convert_quality_threads(&threads, "q", &mut rng);
        assert_eq!(conv.skipped, 1);
        let t = &conv.tuples[0];
        assert_eq!(t.p, "main-a0");
        assert_eq!(t.negs.len(), 7);
        assert_eq!(t.negs[0], "main-a2");
        assert_eq!(conv.own_negatives[0], 1);
        assert!(t.negs[1..].iter().all(|n| !n.starts_with("main-")));
    }

    #[test]
    fn quality_tie_and_exact_gap() {
        let threads = vec![thread("a", &[0.7, 0.7, 0.4]), thread("b", &[0.2, 0.9])];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = convert_quality_threads(&threads, "q", &mut rng);
        assert_eq!(conv.tuples[0].p, "a-a0");
        assert_eq!(conv.tuples[0].negs[0], "a-a2");
        assert_eq!(conv.own_negatives, vec![1, 1]);
    }

    #[test]
    fn class_tuples_with_replacement() {
        let recs = vec![
            labeled("a1", "A"),
            labeled("a2", "A"),
            labeled("b1", "B"),
            labeled("b2", "B"),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tuples = build_class_tuples(&recs, &mut rng).unwrap();
        assert_eq!(tuples.len(), 4);
        for t in &tuples {
            assert_eq!(t.negs.len(), 7);
            assert_eq!(t.q.chars().next(), t.p.chars().next());
            assert_ne!(t.q, t.p);
            assert!(t
                .negs
                .iter()
                .all(|n| n.chars().next() != t.q.chars().next()));
        }
    }

    #[test]
    fn class_tuples_impossible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one_class = vec![labeled("a1", "A"), labeled("a2", "A")];
        assert!(build_class_tuples(&one_class, &mut rng).is_err());
        let singletons = vec![labeled("a1", "A"), labeled("b1", "B")];
        assert!(build_class_tuples(&singletons, &mut rng).is_err());
    }

    #[test]
    fn unique_id_suffix() {
        let t = TupleRecord {
            q: "q".into(),
            p: "p".into(),
            negs: vec!["n".into(); 7],
            dataset: "d".into(),
        };
        let tagged = append_unique_id(&t, &unique_id(1));
        assert!(std::iter::once(&tagged.q)
            .chain([&tagged.p])
            .chain(&tagged.negs)
            .all(|s| s.ends_with(" t01")));
        assert_eq!(append_unique_id(&tagged, "t01").q, "q t01 t01");
        assert_ne!(unique_id(0), unique_id(1));
    }
}
