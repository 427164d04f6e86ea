//! Dense tensors and a reverse-mode differentiation tape.
//!
//! The primitive set is exactly what the encoder and the training losses
//! need: matmul, transpose, broadcasting elementwise arithmetic, scalar ops,
//! `exp`/`log`/`pow`, axis reductions, row softmax, layer normalisation,
//! GELU, row gather, 2-D slice/concat, L2 row normalisation and masked fill.
//!
//! A fresh [`Graph`] is built for every training step. Parameters enter as
//! [`Graph::param`] leaves, everything else as [`Graph::constant`].

mod graph;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero-sized dimension")]
    EmptyDimension(Vec<usize>),
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of a non-positive value")]
    LogNonPositive,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward needs a single-element loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any grad-enabled tensor")]
    Detached,
    #[error("backward already ran on this graph; call zero_grads first")]
    BackwardTwice,
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over the coordinates of `x`,
/// with the numeric derivative taken by central differences of step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    if !g.value(out).is_scalar() {
        return Err(TensorError::NotScalar(g.value(out).shape().to_vec()));
    }
    g.backward(out)?;
    let analytic = g.grad(xv).ok_or(TensorError::Detached)?;

    let eval = |probe: Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let v = g.constant(probe);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Plain-vector helpers shared by inference and evaluation code.
pub mod vecops {
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (norm(a) * norm(b))
    }

    /// Copy of `a` scaled to unit norm; `None` for a zero vector.
    pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
        let n = norm(a);
        (n > 0.0).then(|| a.iter().map(|x| x / n).collect())
    }
}
