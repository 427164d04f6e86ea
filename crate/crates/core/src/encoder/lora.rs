//! Low-rank adapters.
//!
//! An adapted matrix `W (d_out × d_in)` gains `scale · B A` with
//! `A: rank × d_in` and `B: d_out × rank`. `B` starts at zero, so a fresh
//! adapter leaves the base model's outputs untouched.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Tensor, TensorError, Var};

use super::EncoderError;

pub const LORA_INIT_STD: f64 = 0.02;

/// The two factors for one adapted matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: Tensor,
    pub b: Tensor,
}

impl LoraPair {
    pub fn new(d_out: usize, d_in: usize, rank: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, LORA_INIT_STD).expect("valid std");
        let a: Vec<f64> = (0..rank * d_in).map(|_| normal.sample(rng)).collect();
        Self {
            a: Tensor::new(vec![rank, d_in], a).expect("finite init"),
            b: Tensor::zeros(&[d_out, rank]),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.a.numel() + self.b.numel()
    }
}

/// Adapter factors for one task, keyed by matrix name
/// (`embed/tokens`, `layer0/q`, `layer0/k`, …).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoraAdapter {
    pub matrices: BTreeMap<String, LoraPair>,
}

impl LoraAdapter {
    pub fn parameter_count(&self) -> usize {
        self.matrices.values().map(LoraPair::parameter_count).sum()
    }
}

/// Added parameter count of a rank-`r` adapter on a `d_out × d_in` matrix.
pub fn lora_overhead(d_in: usize, d_out: usize, rank: usize) -> usize {
    rank * d_in + d_out * rank
}

/// `x Wᵀ + scale · (x Aᵀ) Bᵀ` on plain tensors.
pub fn lora_linear(
    x: &Tensor,
    w: &Tensor,
    a: &Tensor,
    b: &Tensor,
    scale: f64,
) -> Result<Tensor, EncoderError> {
    let mut g = Graph::new();
    let (xv, wv, av, bv) = (
        g.constant(x.clone()),
        g.constant(w.clone()),
        g.constant(a.clone()),
        g.constant(b.clone()),
    );
    let out = lora_linear_graph(&mut g, xv, wv, Some((av, bv)), scale)?;
    Ok(g.value(out).clone())
}

pub(crate) fn lora_linear_graph(
    g: &mut Graph,
    x: Var,
    w: Var,
    adapter: Option<(Var, Var)>,
    scale: f64,
) -> Result<Var, EncoderError> {
    let (_, d_in) = g.value(x).dims2()?;
    let (d_out, w_in) = g.value(w).dims2()?;
    if d_in != w_in {
        return Err(
            TensorError::Shape(format!("input width {d_in} vs weight {d_out}x{w_in}")).into(),
        );
    }
    let wt = g.transpose(w)?;
    let base = g.matmul(x, wt)?;
    let Some((a, b)) = adapter else {
        return Ok(base);
    };
    let (rank_a, a_in) = g.value(a).dims2()?;
    let (b_out, rank_b) = g.value(b).dims2()?;
    if rank_a != rank_b {
        return Err(EncoderError::RankMismatch(rank_a, rank_b));
    }
    if a_in != d_in || b_out != d_out {
        return Err(TensorError::Shape(format!(
            "adapter {rank_a}x{a_in} / {b_out}x{rank_b} for weight {d_out}x{d_in}"
        ))
        .into());
    }
    let at = g.transpose(a)?;
    let low = g.matmul(x, at)?;
    let bt = g.transpose(b)?;
    let delta = g.matmul(low, bt)?;
    let delta = g.mul_scalar(delta, scale)?;
    Ok(g.add(base, delta)?)
}
