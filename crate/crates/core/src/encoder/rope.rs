//! Rotary position encoding.
//!
//! Dimension pair `(2i, 2i+1)` of a head vector at position `p` is rotated by
//! the angle `p · base^(−2i/head_dim)`.

use crate::autodiff::{Graph, Tensor, TensorError, Var};

use super::EncoderError;

fn angle(pos: f64, pair: usize, head_dim: usize, base: f64) -> f64 {
    pos * base.powf(-2.0 * pair as f64 / head_dim as f64)
}

/// Rotates one head vector in place as if it sat at `pos`.
pub fn rotate_in_place(x: &mut [f64], pos: f64, base: f64) {
    let hd = x.len();
    for i in 0..hd / 2 {
        let (s, c) = angle(pos, i, hd, base).sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = a * c - b * s;
        x[2 * i + 1] = a * s + b * c;
    }
}

/// Rotates a `heads × len × head_dim` tensor, row `t` sitting at `positions[t]`.
pub fn apply_rope_at(x: &Tensor, positions: &[f64], base: f64) -> Result<Tensor, EncoderError> {
    let [heads, len, hd] = x.shape() else {
        return Err(TensorError::Shape(format!(
            "rope expects heads×len×head_dim, got {:?}",
            x.shape()
        ))
        .into());
    };
    if hd % 2 != 0 {
        return Err(EncoderError::OddHeadDim(*hd));
    }
    if positions.len() != *len {
        return Err(
            TensorError::Shape(format!("{} positions for length {len}", positions.len())).into(),
        );
    }
    if !(base > 0.0 && base.is_finite()) {
        return Err(EncoderError::Config(format!(
            "rope base {base} must be positive"
        )));
    }
    let mut out = x.clone();
    for h in 0..*heads {
        for (t, &pos) in positions.iter().enumerate() {
            let start = (h * len + t) * hd;
            rotate_in_place(&mut out.data_mut()[start..start + hd], pos, base);
        }
    }
    Ok(out)
}

/// Rotates queries and keys at positions `0..len`.
pub fn apply_rope(q: &Tensor, k: &Tensor, base: f64) -> Result<(Tensor, Tensor), EncoderError> {
    if q.shape() != k.shape() {
        return Err(TensorError::Shape(format!(
            "query shape {:?} differs from key shape {:?}",
            q.shape(),
            k.shape()
        ))
        .into());
    }
    let len = q.shape().get(1).copied().unwrap_or(0);
    let positions: Vec<f64> = (0..len).map(|p| p as f64).collect();
    Ok((
        apply_rope_at(q, &positions, base)?,
        apply_rope_at(k, &positions, base)?,
    ))
}

/// Constant tables for applying the rotation inside a graph to a
/// `(batch·len) × d_model` activation whose heads are laid out side by side.
pub(crate) struct RopeTables {
    cos: Tensor,
    sin: Tensor,
    swap: Tensor,
    len: usize,
    d_model: usize,
}

impl RopeTables {
    pub fn new(len: usize, d_model: usize, n_heads: usize, base: f64) -> Self {
        let hd = d_model / n_heads;
        let mut cos = Tensor::zeros(&[len, d_model]);
        let mut sin = Tensor::zeros(&[len, d_model]);
        for p in 0..len {
            for h in 0..n_heads {
                for i in 0..hd / 2 {
                    let (s, c) = angle(p as f64, i, hd, base).sin_cos();
                    let col = h * hd + 2 * i;
                    for off in 0..2 {
                        cos.data_mut()[p * d_model + col + off] = c;
                        sin.data_mut()[p * d_model + col + off] = s;
                    }
                }
            }
        }
        // x · swap maps (a, b) to (−b, a) within every pair
        let mut swap = Tensor::zeros(&[d_model, d_model]);
        for i in 0..d_model / 2 {
            swap.data_mut()[(2 * i + 1) * d_model + 2 * i] = -1.0;
            swap.data_mut()[(2 * i) * d_model + 2 * i + 1] = 1.0;
        }
        Self {
            cos,
            sin,
            swap,
            len,
            d_model,
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let rows = g.value(x).shape()[0];
        let batch = rows / self.len;
        let cos = g.constant(self.cos.clone());
        let sin = g.constant(self.sin.clone());
        let swap = g.constant(self.swap.clone());
        let shape3 = [batch, self.len, self.d_model];
        let x3 = g.reshape(x, &shape3)?;
        let xc = g.mul(x3, cos)?;
        let swapped = g.matmul(x, swap)?;
        let s3 = g.reshape(swapped, &shape3)?;
        let xs = g.mul(s3, sin)?;
        let sum = g.add(xc, xs)?;
        g.reshape(sum, &[rows, self.d_model])
    }
}
