//! Random ranking instances for the metric oracles.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

pub fn doc_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("d{i}")).collect()
}

pub fn rels_map(ids: &[String], rels: &[f64]) -> BTreeMap<String, f64> {
    ids.iter()
        .zip(rels)
        .filter(|(_, &r)| r > 0.0)
        .map(|(i, &r)| (i.clone(), r))
        .collect()
}

/// A random full ranking over `n` docs with graded relevance, at least one positive.
pub fn random_instance(r: &mut impl Rng) -> (Vec<usize>, Vec<f64>) {
    let n = r.random_range(2..=15);
    let mut rels: Vec<f64> = (0..n)
        .map(|_| f64::from(r.random_range(0..=3u8).saturating_sub(1)))
        .collect();
    if rels.iter().all(|&x| x == 0.0) {
        rels[r.random_range(0..n)] = 1.0;
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.shuffle(r);
    (ranking, rels)
}
