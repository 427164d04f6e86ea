use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const PROBE_ITERATIONS: usize = 500;
pub const PROBE_LR: f64 = 0.1;
pub const PROBE_L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Test rows whose class never appears in training; each counts as an error.
    pub unseen: usize,
}

/// Multinomial logistic regression trained by full-batch gradient descent
/// from zero weights, evaluated on the test rows.
pub fn logistic_probe(
    train_x: &[Vec<f64>],
    train_y: &[String],
    test_x: &[Vec<f64>],
    test_y: &[String],
) -> Result<ProbeResult, EvalError> {
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(EvalError::Input("embedding and label counts differ".into()));
    }
    if test_x.is_empty() {
        return Err(EvalError::Input("empty test set".into()));
    }
    let classes: BTreeMap<&str, usize> = {
        let mut names: Vec<&str> = train_y.iter().map(String::as_str).collect();
        names.sort_unstable();
        names.dedup();
        names.into_iter().enumerate().map(|(i, c)| (c, i)).collect()
    };
    if classes.len() < 2 {
        return Err(EvalError::Input(format!(
            "probe needs two training classes, found {}",
            classes.len()
        )));
    }
    let d = train_x[0].len();
    if train_x.iter().chain(test_x).any(|x| x.len() != d) {
        return Err(EvalError::Input("embeddings differ in dimension".into()));
    }
    let c = classes.len();
    let n = train_x.len() as f64;
    let targets: Vec<usize> = train_y.iter().map(|y| classes[y.as_str()]).collect();
    let mut w = vec![vec![0.0; d]; c];
    let mut b = vec![0.0; c];
    let mut probs = vec![0.0; c];
    for _ in 0..PROBE_ITERATIONS {
        let mut gw = vec![vec![0.0; d]; c];
        let mut gb = vec![0.0; c];
        for (x, &t) in train_x.iter().zip(&targets) {
            softmax_into(&w, &b, x, &mut probs);
            for k in 0..c {
                let err = probs[k] - f64::from(u8::from(k == t));
                gb[k] += err;
                for (g, xi) in gw[k].iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
        }
        for k in 0..c {
            b[k] -= PROBE_LR * gb[k] / n;
            for j in 0..d {
                w[k][j] -= PROBE_LR * (gw[k][j] / n + PROBE_L2 * w[k][j]);
            }
        }
    }
    let (mut correct, mut unseen) = (0usize, 0usize);
    for (x, y) in test_x.iter().zip(test_y) {
        let Some(&t) = classes.get(y.as_str()) else {
            unseen += 1;
            continue;
        };
        softmax_into(&w, &b, x, &mut probs);
        let pred = (0..c)
            .max_by(|&i, &j| probs[i].total_cmp(&probs[j]).then(j.cmp(&i)))
            .unwrap_or(0);
        correct += usize::from(pred == t);
    }
    Ok(ProbeResult {
        accuracy: correct as f64 / test_x.len() as f64,
        unseen,
    })
}

fn softmax_into(w: &[Vec<f64>], b: &[f64], x: &[f64], out: &mut [f64]) {
    for k in 0..w.len() {
        out[k] = b[k] + w[k].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
    let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in out.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in out.iter_mut() {
        *v /= z;
    }
}
