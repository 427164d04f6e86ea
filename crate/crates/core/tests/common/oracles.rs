//! Direct-summation reference implementations.
//!
//! These work on plain `Vec<f64>` rows with textbook formulas and no
//! log-sum-exp shifting, independent of the graph-based code paths.
#![allow(dead_code)]

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[allow(clippy::needless_range_loop)]
pub fn info_nce(sim: &[Vec<f64>], tau: f64) -> f64 {
    let k = sim.len();
    let mut total = 0.0;
    for i in 0..k {
        let num = (sim[i][i] / tau).exp();
        let den: f64 = (0..k).map(|j| (sim[i][j] / tau).exp()).sum();
        total -= (num / den).ln();
    }
    total
}

pub fn pair_loss(q: &[Vec<f64>], p: &[Vec<f64>], tau: f64) -> f64 {
    let k = q.len();
    let s: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| cos(&q[i], &p[j])).collect())
        .collect();
    let st: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| cos(&p[i], &q[j])).collect())
        .collect();
    info_nce(&s, tau) + info_nce(&st, tau)
}

/// `negs[i][j]` is the j-th negative of tuple i.
pub fn triplet_loss(q: &[Vec<f64>], p: &[Vec<f64>], negs: &[Vec<Vec<f64>>], tau: f64) -> f64 {
    let k = q.len();
    let e = |a: &[f64], b: &[f64]| (cos(a, b) / tau).exp();
    let mut fwd = 0.0;
    let mut rev = 0.0;
    for r in 0..k {
        let mut den = 0.0;
        for i in 0..k {
            den += e(&q[r], &p[i]);
            for n in &negs[i] {
                den += e(&q[r], n);
            }
        }
        fwd += -(e(&q[r], &p[r]) / den).ln();
        let den_rev: f64 = (0..k).map(|i| e(&p[r], &q[i])).sum();
        rev += -(e(&p[r], &q[r]) / den_rev).ln();
    }
    fwd / k as f64 + rev / k as f64
}

pub fn cosent(s: &[f64], zeta: &[f64], tau: f64) -> f64 {
    let mut acc = 1.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if zeta[i] > zeta[j] {
                acc += ((s[j] - s[i]) / tau).exp();
            }
        }
    }
    acc.ln()
}

pub fn separation(emb: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let n = emb.len();
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let s = cos(&emb[i], &emb[j]);
            if labels[i] == labels[j] {
                same.push(s);
            } else {
                cross.push(s);
            }
        }
    }
    let mut acc = 1.0;
    for a in &same {
        for b in &cross {
            acc += ((b - a) / tau).exp();
        }
    }
    acc.ln()
}

pub fn mlm(logits: &[Vec<f64>], targets: &[usize], masked: &[usize]) -> f64 {
    let mut total = 0.0;
    for &p in masked {
        let row = &logits[p];
        let den: f64 = row.iter().map(|v| v.exp()).sum();
        total -= (row[targets[p]].exp() / den).ln();
    }
    total / masked.len() as f64
}

pub fn truncate(rows: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let t = &r[..dim];
            let n = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            t.iter().map(|x| x / n).collect()
        })
        .collect()
}

// ----- retrieval metrics -----

/// nDCG@k of one ranking with exponential gain.
pub fn ndcg(ranking: &[usize], rel: &dyn Fn(usize) -> f64, all_rels: &[f64], k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &d)| (2f64.powf(rel(d)) - 1.0) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal = all_rels.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| (2f64.powf(r) - 1.0) / ((i + 2) as f64).log2())
        .sum();
    dcg / idcg
}

pub fn average_precision(ranking: &[usize], relevant: &dyn Fn(usize) -> bool) -> f64 {
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (i, &d) in ranking.iter().enumerate() {
        if relevant(d) {
            hits += 1.0;
            sum += hits / (i + 1) as f64;
        }
    }
    sum / hits
}

/// Average ranks by counting strictly-smaller and equal elements.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let eq = x.iter().filter(|&&u| u == v).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// V-measure from entropy definitions, enumerating label sets directly.
pub fn v_measure(pred: &[usize], gold: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let classes: std::collections::BTreeSet<usize> = gold.iter().copied().collect();
    let clusters: std::collections::BTreeSet<usize> = pred.iter().copied().collect();
    let count = |f: &dyn Fn(usize) -> bool| (0..pred.len()).filter(|&i| f(i)).count() as f64;
    let entropy = |set: &std::collections::BTreeSet<usize>, lab: &[usize]| -> f64 {
        set.iter()
            .map(|&c| {
                let p = count(&|i| lab[i] == c) / n;
                if p > 0.0 {
                    -p * p.ln()
                } else {
                    0.0
                }
            })
            .sum()
    };
    let h_c = entropy(&classes, gold);
    let h_k = entropy(&clusters, pred);
    let mut h_c_k = 0.0;
    let mut h_k_c = 0.0;
    for &c in &classes {
        for &k in &clusters {
            let nck = count(&|i| gold[i] == c && pred[i] == k);
            if nck == 0.0 {
                continue;
            }
            let nk = count(&|i| pred[i] == k);
            let nc = count(&|i| gold[i] == c);
            h_c_k -= nck / n * (nck / nk).ln();
            h_k_c -= nck / n * (nck / nc).ln();
        }
    }
    let h = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_k / h_c };
    let c = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_c / h_k };
    if h + c == 0.0 {
        0.0
    } else {
        2.0 * h * c / (h + c)
    }
}
