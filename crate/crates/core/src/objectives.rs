//! Training objectives.
//!
//! Every loss consumes embeddings (or similarity scores) already recorded on a
//! [`Graph`] and returns a scalar node, so gradients flow back into the
//! encoder. Similarities are cosine similarities throughout. All
//! `log Σ exp` terms are evaluated with a max shift.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("similarity matrix must be square, got {0}x{1}")]
    NonSquare(usize, usize),
    #[error("row count mismatch: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error("expected {expected} negative rows ({per_tuple} per tuple), got {got}")]
    NegativeMismatch {
        expected: usize,
        per_tuple: usize,
        got: usize,
    },
    #[error("no masked positions to score")]
    NoMaskedPositions,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("truncation dimension {0} is not one of the configured dims")]
    DimNotAllowed(usize),
    #[error("empty batch")]
    EmptyBatch,
}

/// Softmax temperature τ > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const PAIR: Temperature = Temperature(0.05);
    pub const PAIR_LONG: Temperature = Temperature(0.02);
    pub const TEXT_MATCHING: Temperature = Temperature(0.05);
    pub const CLASSIFICATION: Temperature = Temperature(0.02);
    pub const SEPARATION: Temperature = Temperature(0.02);
    pub const RETRIEVAL: Temperature = Temperature(0.05);

    pub fn new(tau: f64) -> Result<Self, LossError> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(LossError::Temperature(tau))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = LossError;
    fn try_from(v: f64) -> Result<Self, LossError> {
        Self::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// k×c matrix with ones on the leading diagonal.
fn diagonal_mask(k: usize, c: usize) -> Tensor {
    let mut t = Tensor::zeros(&[k, c]);
    for i in 0..k {
        t.data_mut()[i * c + i] = 1.0;
    }
    t
}

/// `Σ_i [ lse_j(sim_ij / τ) − sim_ii / τ ]` for a k×c matrix with c ≥ k,
/// column i being the positive for row i.
fn contrastive_rows(g: &mut Graph, sim: Var, tau: Temperature) -> Result<Var, LossError> {
    let (k, c) = g.value(sim).dims2()?;
    if c < k {
        return Err(LossError::RowMismatch(k, c));
    }
    let scaled = g.div_scalar(sim, tau.value())?;
    let lse = g.logsumexp_rows(scaled)?;
    let mask = g.constant(diagonal_mask(k, c));
    let picked = g.mul(scaled, mask)?;
    let pos = g.sum_axis(picked, 1)?;
    let per_row = g.sub(lse, pos)?;
    Ok(g.sum_all(per_row)?)
}

/// Masked-language-model cross-entropy averaged over `masked_positions`.
///
/// `logits` is `positions × vocab` with one row per flattened token;
/// `targets[p]` is the original id at flattened position `p`.
pub fn mlm_loss(
    g: &mut Graph,
    logits: Var,
    targets: &[usize],
    masked_positions: &[usize],
) -> Result<Var, LossError> {
    if masked_positions.is_empty() {
        return Err(LossError::NoMaskedPositions);
    }
    let (rows, vocab) = g.value(logits).dims2()?;
    if targets.len() != rows {
        return Err(LossError::LengthMismatch(targets.len(), rows));
    }
    let picked_rows = g.gather_rows(logits, masked_positions)?;
    let lse = g.logsumexp_rows(picked_rows)?;
    let mut onehot = Tensor::zeros(&[masked_positions.len(), vocab]);
    for (r, &p) in masked_positions.iter().enumerate() {
        let t = targets[p];
        if t >= vocab {
            return Err(TensorError::IndexOutOfRange {
                index: t,
                len: vocab,
            }
            .into());
        }
        onehot.data_mut()[r * vocab + t] = 1.0;
    }
    let onehot = g.constant(onehot);
    let sel = g.mul(picked_rows, onehot)?;
    let target_logit = g.sum_axis(sel, 1)?;
    let nll = g.sub(lse, target_logit)?;
    Ok(g.mean_all(nll)?)
}

/// InfoNCE over a square similarity matrix whose diagonal holds the positives.
pub fn info_nce(g: &mut Graph, sim: Var, tau: Temperature) -> Result<Var, LossError> {
    let (k, c) = g.value(sim).dims2()?;
    if k != c {
        return Err(LossError::NonSquare(k, c));
    }
    contrastive_rows(g, sim, tau)
}

/// InfoNCE in both directions: queries against passages and passages against queries.
pub fn pair_loss_bidirectional(
    g: &mut Graph,
    queries: Var,
    passages: Var,
    tau: Temperature,
) -> Result<Var, LossError> {
    let (kq, _) = g.value(queries).dims2()?;
    let (kp, _) = g.value(passages).dims2()?;
    if kq != kp {
        return Err(LossError::RowMismatch(kq, kp));
    }
    let s = g.cosine_similarity_matrix(queries, passages)?;
    let forward = info_nce(g, s, tau)?;
    let st = g.transpose(s)?;
    let backward = info_nce(g, st, tau)?;
    Ok(g.add(forward, backward)?)
}

/// Contrastive loss with explicit negatives.
///
/// `negatives` stacks `m` rows per tuple, tuple-major: rows `i·m .. (i+1)·m`
/// belong to tuple `i`. Each query is scored against every in-batch positive
/// and every in-batch negative; each positive is scored against the in-batch
/// queries only. Both directions are averaged over tuples.
pub fn triplet_loss(
    g: &mut Graph,
    queries: Var,
    positives: Var,
    negatives: Option<Var>,
    per_tuple: usize,
    tau: Temperature,
) -> Result<Var, LossError> {
    let (k, _) = g.value(queries).dims2()?;
    let (kp, _) = g.value(positives).dims2()?;
    if k != kp {
        return Err(LossError::RowMismatch(k, kp));
    }
    let got = match negatives {
        Some(n) => g.value(n).dims2()?.0,
        None => 0,
    };
    if got != k * per_tuple {
        return Err(LossError::NegativeMismatch {
            expected: k * per_tuple,
            per_tuple,
            got,
        });
    }
    let candidates = match negatives {
        Some(n) => g.concat(&[positives, n], 0)?,
        None => positives,
    };
    let s_fwd = g.cosine_similarity_matrix(queries, candidates)?;
    let fwd = contrastive_rows(g, s_fwd, tau)?;
    let s_rev = g.cosine_similarity_matrix(positives, queries)?;
    let rev = contrastive_rows(g, s_rev, tau)?;
    let total = g.add(fwd, rev)?;
    Ok(g.div_scalar(total, k as f64)?)
}

/// A scalar zero that still depends on `anchor`, for losses with nothing to rank.
fn zero_like(g: &mut Graph, anchor: Var) -> Result<Var, LossError> {
    let s = g.sum_all(anchor)?;
    Ok(g.mul_scalar(s, 0.0)?)
}

/// Ordered index pairs `(i, j)` with `zeta[i] > zeta[j]`.
pub fn comparable_pairs(zeta: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..zeta.len() {
        for j in 0..zeta.len() {
            if zeta[i] > zeta[j] {
                out.push((i, j));
            }
        }
    }
    out
}

/// CoSent ranking loss: `ln(1 + Σ_{ζ_i > ζ_j} exp((s_j − s_i)/τ))`.
///
/// `scores` is an n×1 column of pair similarities.
pub fn cosent_loss(
    g: &mut Graph,
    scores: Var,
    zeta: &[f64],
    tau: Temperature,
) -> Result<Var, LossError> {
    let n = g.value(scores).numel();
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    if zeta.len() != n {
        return Err(LossError::LengthMismatch(n, zeta.len()));
    }
    let pairs = comparable_pairs(zeta);
    if pairs.is_empty() {
        return zero_like(g, scores);
    }
    let col = g.reshape(scores, &[n, 1])?;
    let hi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let lo: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let s_hi = g.gather_rows(col, &hi)?;
    let s_lo = g.gather_rows(col, &lo)?;
    let diff = g.sub(s_lo, s_hi)?;
    let scaled = g.div_scalar(diff, tau.value())?;
    let zero = g.constant(Tensor::zeros(&[1, 1]));
    let all = g.concat(&[zero, scaled], 0)?;
    let row = g.transpose(all)?;
    let lse = g.logsumexp_rows(row)?;
    Ok(g.reshape(lse, &[])?)
}

/// Result of [`separation_loss`]; `degenerate` is set when the batch lacks
/// either a same-label or a cross-label pair, in which case `loss` is zero.
#[derive(Debug, Clone, Copy)]
pub struct SeparationLoss {
    pub loss: Var,
    pub degenerate: bool,
}

/// CoSent over all unordered pairs of a labelled batch, with ground truth 1
/// for same-label pairs and 0 otherwise.
pub fn separation_loss(
    g: &mut Graph,
    embeddings: Var,
    labels: &[usize],
    tau: Temperature,
) -> Result<SeparationLoss, LossError> {
    let (n, _) = g.value(embeddings).dims2()?;
    if labels.len() != n {
        return Err(LossError::LengthMismatch(n, labels.len()));
    }
    if n < 2 {
        return Err(LossError::EmptyBatch);
    }
    let mut flat = Vec::new();
    let mut zeta = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            flat.push(i * n + j);
            zeta.push(if labels[i] == labels[j] { 1.0 } else { 0.0 });
        }
    }
    let has_same = zeta.contains(&1.0);
    let has_cross = zeta.contains(&0.0);
    if !(has_same && has_cross) {
        log::warn!("separation batch has no same-label/cross-label contrast; loss is zero");
        return Ok(SeparationLoss {
            loss: zero_like(g, embeddings)?,
            degenerate: true,
        });
    }
    let sim = g.cosine_similarity_matrix(embeddings, embeddings)?;
    let col = g.reshape(sim, &[n * n, 1])?;
    let scores = g.gather_rows(col, &flat)?;
    Ok(SeparationLoss {
        loss: cosent_loss(g, scores, &zeta, tau)?,
        degenerate: false,
    })
}

/// First `dim` columns of each row, rescaled to unit norm.
pub fn truncate_normalize(g: &mut Graph, emb: Var, dim: usize) -> Result<Var, LossError> {
    let (rows, cols) = g.value(emb).dims2()?;
    let t = if dim == cols {
        emb
    } else {
        g.slice(emb, 0..rows, 0..dim)?
    };
    Ok(g.l2_normalize_rows(t)?)
}

/// Weighted sum of `loss_fn` evaluated on every truncation in `dims`.
///
/// `embeddings` are the full-width inputs to `loss_fn` (e.g. queries and
/// passages); each is truncated and renormalised before the call.
pub fn mrl_loss<F>(
    g: &mut Graph,
    embeddings: &[Var],
    dims: &[usize],
    weights: &[f64],
    allowed_dims: &[usize],
    mut loss_fn: F,
) -> Result<Var, LossError>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var, LossError>,
{
    if dims.len() != weights.len() {
        return Err(LossError::LengthMismatch(dims.len(), weights.len()));
    }
    if dims.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total: Option<Var> = None;
    for (&d, &w) in dims.iter().zip(weights) {
        if !allowed_dims.contains(&d) {
            return Err(LossError::DimNotAllowed(d));
        }
        let truncated = embeddings
            .iter()
            .map(|&e| truncate_normalize(g, e, d))
            .collect::<Result<Vec<_>, _>>()?;
        let l = loss_fn(g, &truncated)?;
        let wl = g.mul_scalar(l, w)?;
        total = Some(match total {
            Some(t) => g.add(t, wl)?,
            None => wl,
        });
    }
    Ok(total.expect("dims is non-empty"))
}
