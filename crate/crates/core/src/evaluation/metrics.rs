use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::QrelRecord;

use super::EvalError;

/// Query id → doc id → graded relevance.
pub type Qrels = BTreeMap<String, BTreeMap<String, f64>>;

pub fn qrels_from_records(records: &[QrelRecord]) -> Result<Qrels, EvalError> {
    let mut q = Qrels::new();
    for r in records {
        if !(r.rel.is_finite() && r.rel >= 0.0) {
            return Err(EvalError::Input(format!(
                "qrel {}/{} has relevance {}",
                r.qid, r.did, r.rel
            )));
        }
        q.entry(r.qid.clone())
            .or_default()
            .insert(r.did.clone(), r.rel);
    }
    Ok(q)
}

fn discount(rank0: usize) -> f64 {
    ((rank0 + 2) as f64).log2()
}

fn gain(rel: f64) -> f64 {
    rel.exp2() - 1.0
}

/// nDCG@k of one ranking with gain `2^rel − 1`. `None` when no doc is relevant.
pub fn ndcg_at_k(ranking: &[&str], rels: &BTreeMap<String, f64>, k: usize) -> Option<f64> {
    let mut ideal: Vec<f64> = rels.values().copied().filter(|&r| r > 0.0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain(r) / discount(i))
        .sum();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(rels.get(*d).copied().unwrap_or(0.0)) / discount(i))
        .sum();
    Some(dcg / idcg)
}

/// Mean precision at the ranks of relevant docs (`rel > 0`). `None` when none is relevant.
pub fn average_precision(ranking: &[&str], rels: &BTreeMap<String, f64>) -> Option<f64> {
    let total = rels.values().filter(|&&r| r > 0.0).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if rels.get(*d).is_some_and(|&r| r > 0.0) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    // relevant docs missing from the ranking contribute precision 0
    Some(sum / total as f64)
}

/// Mean of a per-query metric over the queries where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMean {
    pub mean: f64,
    pub evaluated: usize,
    /// Queries without any relevant document.
    pub excluded: usize,
}

/// Averages `metric` over `rankings` in query-id order.
pub fn mean_over_queries(
    rankings: &BTreeMap<String, Vec<String>>,
    qrels: &Qrels,
    metric: impl Fn(&[&str], &BTreeMap<String, f64>) -> Option<f64>,
) -> Result<QueryMean, EvalError> {
    let empty = BTreeMap::new();
    let (mut sum, mut evaluated, mut excluded) = (0.0, 0, 0);
    for (qid, ranking) in rankings {
        let refs: Vec<&str> = ranking.iter().map(String::as_str).collect();
        match metric(&refs, qrels.get(qid).unwrap_or(&empty)) {
            Some(v) => {
                sum += v;
                evaluated += 1;
            }
            None => excluded += 1,
        }
    }
    if evaluated == 0 {
        return Err(EvalError::Input("no query has a relevant document".into()));
    }
    if excluded > 0 {
        log::warn!("{excluded} queries without relevant documents excluded");
    }
    Ok(QueryMean {
        mean: sum / evaluated as f64,
        evaluated,
        excluded,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(EvalError::Input(format!(
            "correlation needs two equal series of length ≥ 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(EvalError::ConstantInput);
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::Input("non-finite score".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rels(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(d, r)| (d.to_string(), *r)).collect()
    }

    #[test]
    fn ndcg_anchors() {
        let r = rels(&[("a", 1.0)]);
        assert_eq!(ndcg_at_k(&["a", "b"], &r, 10), Some(1.0));
        let v = ndcg_at_k(&["b", "a"], &r, 10).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&["a"], &rels(&[("a", 0.0)]), 10), None);
        assert_eq!(ndcg_at_k(&["b", "a"], &r, 1), Some(0.0));
    }

    #[test]
    fn ap_anchors() {
        let r = rels(&[("a", 1.0), ("c", 1.0)]);
        let v = average_precision(&["a", "b", "c", "d"], &r).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let one = rels(&[("x", 1.0)]);
        assert_eq!(average_precision(&["a", "b", "c", "x"], &one), Some(0.25));
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 20.0, 5.0]),
            vec![2.0, 3.5, 3.5, 1.0]
        );
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 90.0]).unwrap(),
            1.0
        );
        assert!(matches!(
            spearman(&[1.0, 1.0], &[1.0, 2.0]),
            Err(EvalError::ConstantInput)
        ));
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn excluded_queries_are_counted() {
        let mut rankings = BTreeMap::new();
        rankings.insert("q1".to_string(), vec!["a".to_string(), "b".to_string()]);
        rankings.insert("q2".to_string(), vec!["a".to_string()]);
        let mut qrels = Qrels::new();
        qrels.insert("q1".into(), rels(&[("b", 1.0)]));
        let m = mean_over_queries(&rankings, &qrels, |r, q| ndcg_at_k(r, q, 10)).unwrap();
        assert_eq!((m.evaluated, m.excluded), (1, 1));
    }
}
