use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.iter().enumerate() {
        let d = dist2(p, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding. Returns a cluster index per point.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(EvalError::Input(format!("k = {k} with {n} points")));
    }
    let dim = points[0].len();
    if points
        .iter()
        .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
    {
        return Err(EvalError::Input(
            "points must be finite and share one dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let next = if total == 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.push(points[next].clone());
    }

    let mut labels = vec![0; n];
    for _ in 0..KMEANS_MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            let new = if counts[c] == 0 {
                // re-seed from the point farthest from its centroid
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| {
                        let da = dist2(&points[a], &centroids[labels[a]]);
                        let db = dist2(&points[b], &centroids[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                taken.push(far);
                points[far].clone()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            };
            moved = moved.max(dist2(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        labels[i] = nearest(p, &centroids).0;
    }
    Ok(labels)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Harmonic mean of homogeneity and completeness.
pub fn v_measure<A: Ord, B: Ord>(pred: &[A], gold: &[B]) -> Result<f64, EvalError> {
    if pred.len() != gold.len() || pred.is_empty() {
        return Err(EvalError::Input(format!(
            "{} predictions for {} labels",
            pred.len(),
            gold.len()
        )));
    }
    let n = pred.len() as f64;
    let mut joint: BTreeMap<(&B, &A), usize> = BTreeMap::new();
    let mut by_class: BTreeMap<&B, usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<&A, usize> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gold) {
        *joint.entry((g, p)).or_default() += 1;
        *by_class.entry(g).or_default() += 1;
        *by_cluster.entry(p).or_default() += 1;
    }
    let h_c = entropy(by_class.values().copied(), n);
    let h_k = entropy(by_cluster.values().copied(), n);
    let (mut h_c_given_k, mut h_k_given_c) = (0.0, 0.0);
    for (&(g, p), &nck) in &joint {
        let nck = nck as f64;
        h_c_given_k -= nck / n * (nck / by_cluster[p] as f64).ln();
        h_k_given_c -= nck / n * (nck / by_class[g] as f64).ln();
    }
    let h = if h_c == 0.0 {
        1.0
    } else {
        1.0 - h_c_given_k / h_c
    };
    let c = if h_k == 0.0 {
        1.0
    } else {
        1.0 - h_k_given_c / h_k
    };
    Ok(if h + c == 0.0 {
        0.0
    } else {
        2.0 * h * c / (h + c)
    })
}
