//! Random loss instances evaluated three ways: through the graph, through
//! the direct-summation oracle, and through a finite-difference grad check.

use mtembed::autodiff::{grad_check, Graph, TensorError, Var};
use mtembed::objectives::{self, LossError, Temperature};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{oracles, random_rows, tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Mlm,
    Pair,
    Triplet,
    Cosent,
    Separation,
    Mrl,
}

pub const ALL: [Kind; 6] = [
    Kind::Mlm,
    Kind::Pair,
    Kind::Triplet,
    Kind::Cosent,
    Kind::Separation,
    Kind::Mrl,
];

pub struct Case {
    pub kind: Kind,
    pub rows: Vec<Vec<f64>>,
    pub k: usize,
    pub m: usize,
    pub labels: Vec<usize>,
    pub zeta: Vec<f64>,
    pub targets: Vec<usize>,
    pub masked: Vec<usize>,
    pub tau: f64,
    pub dims: Vec<usize>,
    pub weights: Vec<f64>,
}

pub fn random_case(kind: Kind, rng: &mut ChaCha8Rng) -> Case {
    let tau = *[0.02, 0.05, 0.5, 1.0].choose(rng).unwrap();
    let mut case = Case {
        kind,
        rows: vec![],
        k: 0,
        m: 0,
        labels: vec![],
        zeta: vec![],
        targets: vec![],
        masked: vec![],
        tau,
        dims: vec![],
        weights: vec![],
    };
    match kind {
        Kind::Mlm => {
            let n = rng.random_range(2..7);
            let vocab = rng.random_range(3..10);
            case.rows = random_rows(rng, n, vocab)
                .into_iter()
                .map(|r| r.into_iter().map(|v| 3.0 * v).collect())
                .collect();
            case.targets = (0..n).map(|_| rng.random_range(0..vocab)).collect();
            case.masked = (0..n).filter(|_| rng.random_bool(0.5)).collect();
            if case.masked.is_empty() {
                case.masked.push(0);
            }
        }
        Kind::Pair => {
            case.k = rng.random_range(1..6);
            let d = rng.random_range(2..6);
            case.rows = random_rows(rng, 2 * case.k, d);
        }
        Kind::Triplet => {
            case.k = rng.random_range(1..4);
            case.m = rng.random_range(0..8);
            let d = rng.random_range(2..6);
            case.rows = random_rows(rng, 2 * case.k + case.k * case.m, d);
        }
        Kind::Cosent => {
            let n = rng.random_range(1..7);
            case.rows = random_rows(rng, n, 1);
            case.zeta = (0..n)
                .map(|_| (rng.random_range(0..4) as f64) / 3.0)
                .collect();
        }
        Kind::Separation => {
            let n = rng.random_range(3..9);
            let d = rng.random_range(2..6);
            case.rows = random_rows(rng, n, d);
            case.labels = (0..n).map(|_| rng.random_range(0..3)).collect();
            // guarantee one same-label and one cross-label pair
            case.labels[0] = 0;
            case.labels[1] = 0;
            case.labels[2] = 1;
        }
        Kind::Mrl => {
            case.k = rng.random_range(1..5);
            case.rows = random_rows(rng, 2 * case.k, 8);
            case.dims = vec![2, 4, 8];
            case.weights = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
        }
    }
    case
}

pub fn eval_graph(g: &mut Graph, x: Var, c: &Case) -> Result<Var, LossError> {
    let tau = Temperature::new(c.tau)?;
    let d = c.rows[0].len();
    let block = |g: &mut Graph, start: usize, len: usize| -> Result<Var, TensorError> {
        g.slice(x, start..start + len, 0..d)
    };
    match c.kind {
        Kind::Mlm => objectives::mlm_loss(g, x, &c.targets, &c.masked),
        Kind::Pair => {
            let q = block(g, 0, c.k)?;
            let p = block(g, c.k, c.k)?;
            objectives::pair_loss_bidirectional(g, q, p, tau)
        }
        Kind::Triplet => {
            let q = block(g, 0, c.k)?;
            let p = block(g, c.k, c.k)?;
            let n = if c.m > 0 {
                Some(block(g, 2 * c.k, c.k * c.m)?)
            } else {
                None
            };
            objectives::triplet_loss(g, q, p, n, c.m, tau)
        }
        Kind::Cosent => objectives::cosent_loss(g, x, &c.zeta, tau),
        Kind::Separation => Ok(objectives::separation_loss(g, x, &c.labels, tau)?.loss),
        Kind::Mrl => {
            let q = block(g, 0, c.k)?;
            let p = block(g, c.k, c.k)?;
            objectives::mrl_loss(g, &[q, p], &c.dims, &c.weights, &[2, 4, 8], |g, v| {
                objectives::pair_loss_bidirectional(g, v[0], v[1], tau)
            })
        }
    }
}

pub fn graph_value(c: &Case) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(tensor(&c.rows));
    let out = eval_graph(&mut g, x, c).unwrap();
    g.value(out).item()
}

pub fn oracle_value(c: &Case) -> f64 {
    let k = c.k;
    match c.kind {
        Kind::Mlm => oracles::mlm(&c.rows, &c.targets, &c.masked),
        Kind::Pair => oracles::pair_loss(&c.rows[..k], &c.rows[k..2 * k], c.tau),
        Kind::Triplet => {
            let negs: Vec<Vec<Vec<f64>>> = (0..k)
                .map(|i| c.rows[2 * k + i * c.m..2 * k + (i + 1) * c.m].to_vec())
                .collect();
            oracles::triplet_loss(&c.rows[..k], &c.rows[k..2 * k], &negs, c.tau)
        }
        Kind::Cosent => {
            let s: Vec<f64> = c.rows.iter().map(|r| r[0]).collect();
            oracles::cosent(&s, &c.zeta, c.tau)
        }
        Kind::Separation => oracles::separation(&c.rows, &c.labels, c.tau),
        Kind::Mrl => c
            .dims
            .iter()
            .zip(&c.weights)
            .map(|(&dim, w)| {
                let t = oracles::truncate(&c.rows, dim);
                w * oracles::pair_loss(&t[..k], &t[k..2 * k], c.tau)
            })
            .sum(),
    }
}

pub fn grad_error(c: &Case) -> f64 {
    grad_check(
        |g, v| {
            eval_graph(g, v, c).map_err(|e| match e {
                LossError::Tensor(t) => t,
                other => panic!("{other}"),
            })
        },
        &tensor(&c.rows),
        1e-6,
    )
    .unwrap()
}
