use std::ops::Range;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, transpose_raw};
use super::{Tensor, TensorError};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    AddScalar {
        x: Var,
    },
    MulScalar {
        x: Var,
        c: f64,
    },
    Exp {
        x: Var,
    },
    Log {
        x: Var,
    },
    Pow {
        x: Var,
        p: f64,
    },
    SumAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        scale: f64,
    },
    SumAll {
        x: Var,
        scale: f64,
    },
    Softmax {
        x: Var,
        cols: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cols: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        x: Var,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
        cols: usize,
    },
    Slice {
        x: Var,
        in_cols: usize,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    Concat {
        parts: Vec<(Var, usize, usize)>,
        axis: usize,
    },
    L2Normalize {
        x: Var,
        cols: usize,
        inv_norms: Vec<f64>,
    },
    MaskedFill {
        x: Var,
        mask: Vec<bool>,
    },
    Reshape {
        x: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape over [`Tensor`] values.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward simply walks it in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite(op))
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat input index for each flat output index under broadcasting.
/// `None` means the input already has the output shape.
fn broadcast_map(input: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if input == out {
        return None;
    }
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..input.len()).rev() {
        let oi = i + rank - input.len();
        strides[oi] = if input[i] == 1 { 0 } else { acc };
        acc *= input[i];
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(map)
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[var.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A gradient-enabled leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// Grad-enabled nodes that the loss does not depend on get a zero
    /// gradient of the right shape.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if !self.backward_done || !self.rg(v) {
            return None;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        let data = match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].value.numel()],
        };
        Some(Tensor::from_parts(shape, data))
    }

    /// Clears accumulated gradients so that `backward` may run again.
    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }

    // ----- primitives -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(TensorError::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        check_finite("matmul", &data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], data),
            Op::MatMul { a, b, m, k, n },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.value(x).dims2()?;
        let data = transpose_raw(self.value(x).data(), rows, cols);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![cols, rows], data),
            Op::Transpose { x, rows, cols },
            rg,
        ))
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let out_shape = broadcast_shape(&sa, &sb)
            .ok_or_else(|| TensorError::Shape(format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let map_a = broadcast_map(&sa, &out_shape);
        let map_b = broadcast_map(&sb, &out_shape);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        if matches!(kind, BinKind::Div) && db.contains(&0.0) {
            return Err(TensorError::DivisionByZero);
        }
        let total: usize = out_shape.iter().product();
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        let data: Vec<f64> = (0..total)
            .map(|i| {
                let ia = map_a.as_ref().map_or(i, |m| m[i]);
                let ib = map_b.as_ref().map_or(i, |m| m[i]);
                f(da[ia], db[ib])
            })
            .collect();
        check_finite("elementwise", &data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data: Vec<f64> = v.data().iter().map(|a| a + c).collect();
        check_finite("add_scalar", &data)?;
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddScalar { x }, rg))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data: Vec<f64> = v.data().iter().map(|a| a * c).collect();
        check_finite("mul_scalar", &data)?;
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::MulScalar { x, c }, rg))
    }

    pub fn div_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        if c == 0.0 {
            return Err(TensorError::DivisionByZero);
        }
        self.mul_scalar(x, 1.0 / c)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, TensorError> {
        self.mul_scalar(x, -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data: Vec<f64> = v.data().iter().map(|a| a.exp()).collect();
        check_finite("exp", &data)?;
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Exp { x }, rg))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        if v.data().iter().any(|&a| a <= 0.0) {
            return Err(TensorError::LogNonPositive);
        }
        let data: Vec<f64> = v.data().iter().map(|a| a.ln()).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Log { x }, rg))
    }

    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data: Vec<f64> = v.data().iter().map(|a| a.powf(p)).collect();
        check_finite("pow", &data)?;
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Pow { x, p }, rg))
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var, TensorError> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Shape(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        if mean {
            data.iter_mut().for_each(|v| *v *= scale);
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::SumAxis {
                x,
                outer,
                len,
                inner,
                scale,
            },
            rg,
        ))
    }

    /// Sum over `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce_axis(x, axis, false)
    }

    /// Mean over `axis`, keeping it as a size-1 dimension.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce_axis(x, axis, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::SumAll { x, scale: 1.0 }, rg))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum::<f64>() / n;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::SumAll { x, scale: 1.0 / n }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let cols = *v
            .shape()
            .last()
            .ok_or_else(|| TensorError::Shape("softmax of a rank-0 tensor".into()))?;
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total += *e;
            }
            row.iter_mut().for_each(|e| *e /= total);
        }
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax { x, cols }, rg))
    }

    /// Per-row normalisation over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let v = self.value(x);
        let cols = *v
            .shape()
            .last()
            .ok_or_else(|| TensorError::Shape("layer_norm of a rank-0 tensor".into()))?;
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(TensorError::Shape(format!(
                "layer_norm gain/bias must have {cols} elements"
            )));
        }
        let rows = v.numel() / cols;
        let mut xhat = vec![0.0; v.numel()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in v.data().chunks(cols).enumerate() {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (c, a) in row.iter().enumerate() {
                xhat[r * cols + c] = (a - mean) * is;
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let data: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, xh)| xh * g[i % cols] + b[i % cols])
            .collect();
        check_finite("layer_norm", &data)?;
        let shape = v.shape().to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data: Vec<f64> = v
            .data()
            .iter()
            .map(|&a| 0.5 * a * (1.0 + (GELU_C * (a + GELU_A * a * a * a)).tanh()))
            .collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Gelu { x }, rg))
    }

    /// Gathers rows of a 2-D table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let (rows, cols) = self.value(table).dims2()?;
        if indices.is_empty() {
            return Err(TensorError::Shape("gather with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange {
                index: bad,
                len: rows,
            });
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), cols], data),
            Op::Gather {
                table,
                indices: indices.to_vec(),
                cols,
            },
            rg,
        ))
    }

    /// Rectangular block of a 2-D tensor.
    pub fn slice(
        &mut self,
        x: Var,
        rows: Range<usize>,
        cols: Range<usize>,
    ) -> Result<Var, TensorError> {
        let (r, c) = self.value(x).dims2()?;
        if rows.start >= rows.end || cols.start >= cols.end || rows.end > r || cols.end > c {
            return Err(TensorError::Shape(format!(
                "slice {rows:?}x{cols:?} out of bounds for {r}x{c}"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            data.extend_from_slice(&src[i * c + cols.start..i * c + cols.end]);
        }
        let shape = vec![rows.len(), cols.len()];
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                x,
                in_cols: c,
                rows,
                cols,
            },
            rg,
        ))
    }

    /// Concatenates 2-D tensors along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Shape("concat of zero tensors".into()));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<_, _>>()?;
        let (rows, cols, data) = match axis {
            0 => {
                let cols = dims[0].1;
                if dims.iter().any(|d| d.1 != cols) {
                    return Err(TensorError::Shape("concat rows: column mismatch".into()));
                }
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                (dims.iter().map(|d| d.0).sum(), cols, data)
            }
            1 => {
                let rows = dims[0].0;
                if dims.iter().any(|d| d.0 != rows) {
                    return Err(TensorError::Shape("concat cols: row mismatch".into()));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for (&p, d) in parts.iter().zip(&dims) {
                        data.extend_from_slice(&self.value(p).data()[r * d.1..(r + 1) * d.1]);
                    }
                }
                (rows, cols, data)
            }
            _ => return Err(TensorError::Shape(format!("concat axis {axis}"))),
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        let parts = parts
            .iter()
            .zip(dims)
            .map(|(&p, (r, c))| (p, r, c))
            .collect();
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::Concat { parts, axis },
            rg,
        ))
    }

    /// Scales every row of a 2-D tensor to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut inv_norms = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * cols);
        for (r, row) in src.chunks(cols).enumerate() {
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(TensorError::ZeroNorm { row: r });
            }
            inv_norms.push(1.0 / norm);
            data.extend(row.iter().map(|a| a / norm));
        }
        check_finite("l2_normalize_rows", &data)?;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::L2Normalize { x, cols, inv_norms },
            rg,
        ))
    }

    /// Replaces entries where `mask` is true by `value`; those entries get no gradient.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var, TensorError> {
        let v = self.value(x);
        if mask.len() != v.numel() {
            return Err(TensorError::Shape(format!(
                "mask of length {} for tensor of {} elements",
                mask.len(),
                v.numel()
            )));
        }
        let data: Vec<f64> = v
            .data()
            .iter()
            .zip(mask)
            .map(|(&a, &m)| if m { value } else { a })
            .collect();
        check_finite("masked_fill", &data)?;
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    // ----- composites -------------------------------------------------

    /// Numerically stable `log Σ exp` over each row of a 2-D tensor (n×1 result).
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.value(x).dims2()?;
        let maxes: Vec<f64> = self
            .value(x)
            .data()
            .chunks(cols)
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shift = self.constant(Tensor::from_parts(vec![rows, 1], maxes));
        let centered = self.sub(x, shift)?;
        let e = self.exp(centered)?;
        let s = self.sum_axis(e, 1)?;
        let l = self.log(s)?;
        self.add(l, shift)
    }

    /// `(i, j) ↦ cos(a_i, b_j)` for 2-D `a` (n×d) and `b` (m×d).
    pub fn cosine_similarity_matrix(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (_, da) = self.value(a).dims2()?;
        let (_, db) = self.value(b).dims2()?;
        if da != db {
            return Err(TensorError::Shape(format!(
                "cosine similarity between dims {da} and {db}"
            )));
        }
        let an = self.l2_normalize_rows(a)?;
        let bn = self.l2_normalize_rows(b)?;
        let bt = self.transpose(bn)?;
        self.matmul(an, bt)
    }

    /// Row-wise cosine `cos(a_i, b_i)` as an n×1 column.
    pub fn rowwise_cosine(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::Shape(format!(
                "rowwise cosine of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let an = self.l2_normalize_rows(a)?;
        let bn = self.l2_normalize_rows(b)?;
        let prod = self.mul(an, bn)?;
        self.sum_axis(prod, 1)
    }

    // ----- backward ---------------------------------------------------

    /// Accumulates `d loss / d node` into every grad-enabled node.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(TensorError::NotScalar(
                self.nodes[loss.0].value.shape().to_vec(),
            ));
        }
        if !self.rg(loss) {
            return Err(TensorError::Detached);
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        for g in self.grads.iter().flatten() {
            check_finite("backward", g)?;
        }
        self.backward_done = true;
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let numel = |v: Var| nodes[v.0].value.numel();
        let rg = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if rg(*a) {
                    let bv = nodes[b.0].value.data();
                    let da = matmul_nt(g, bv, m, n, k);
                    accumulate(grads, *a, m * k, |s| add_into(s, &da));
                }
                if rg(*b) {
                    let av = nodes[a.0].value.data();
                    let db = matmul_tn(av, g, m, k, n);
                    accumulate(grads, *b, k * n, |s| add_into(s, &db));
                }
            }
            Op::Transpose { x, rows, cols } => {
                let back = transpose_raw(g, *cols, *rows);
                accumulate(grads, *x, rows * cols, |s| add_into(s, &back));
            }
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            } => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let ia = |j: usize| map_a.as_ref().map_or(j, |m| m[j]);
                let ib = |j: usize| map_b.as_ref().map_or(j, |m| m[j]);
                if rg(*a) {
                    accumulate(grads, *a, av.len(), |s| {
                        for (j, &gj) in g.iter().enumerate() {
                            let d = match kind {
                                BinKind::Add | BinKind::Sub => 1.0,
                                BinKind::Mul => bv[ib(j)],
                                BinKind::Div => 1.0 / bv[ib(j)],
                            };
                            s[ia(j)] += gj * d;
                        }
                    });
                }
                if rg(*b) {
                    accumulate(grads, *b, bv.len(), |s| {
                        for (j, &gj) in g.iter().enumerate() {
                            let y = bv[ib(j)];
                            let d = match kind {
                                BinKind::Add => 1.0,
                                BinKind::Sub => -1.0,
                                BinKind::Mul => av[ia(j)],
                                BinKind::Div => -av[ia(j)] / (y * y),
                            };
                            s[ib(j)] += gj * d;
                        }
                    });
                }
            }
            Op::AddScalar { x } => accumulate(grads, *x, g.len(), |s| add_into(s, g)),
            Op::MulScalar { x, c } => accumulate(grads, *x, g.len(), |s| {
                s.iter_mut().zip(g).for_each(|(a, b)| *a += c * b)
            }),
            Op::Exp { x } => {
                let y = node.value.data();
                accumulate(grads, *x, g.len(), |s| {
                    for j in 0..g.len() {
                        s[j] += g[j] * y[j];
                    }
                })
            }
            Op::Log { x } => {
                let xv = nodes[x.0].value.data();
                accumulate(grads, *x, g.len(), |s| {
                    for j in 0..g.len() {
                        s[j] += g[j] / xv[j];
                    }
                })
            }
            Op::Pow { x, p } => {
                let xv = nodes[x.0].value.data();
                accumulate(grads, *x, g.len(), |s| {
                    for j in 0..g.len() {
                        s[j] += g[j] * p * xv[j].powf(p - 1.0);
                    }
                })
            }
            Op::SumAxis {
                x,
                outer,
                len,
                inner,
                scale,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                accumulate(grads, *x, outer * len * inner, |s| {
                    for o in 0..outer {
                        for a in 0..len {
                            let base = (o * len + a) * inner;
                            for i in 0..inner {
                                s[base + i] += g[o * inner + i] * scale;
                            }
                        }
                    }
                })
            }
            Op::SumAll { x, scale } => {
                let d = g[0] * scale;
                accumulate(grads, *x, numel(*x), |s| s.iter_mut().for_each(|a| *a += d))
            }
            Op::Softmax { x, cols } => {
                let y = node.value.data();
                accumulate(grads, *x, g.len(), |s| {
                    for (r, (yr, gr)) in y.chunks(*cols).zip(g.chunks(*cols)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..*cols {
                            s[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                inv_std,
            } => {
                let cols = *cols;
                let gv = nodes[gain.0].value.data();
                if rg(*gain) {
                    accumulate(grads, *gain, cols, |s| {
                        for (j, gj) in g.iter().enumerate() {
                            s[j % cols] += gj * xhat[j];
                        }
                    });
                }
                if rg(*bias) {
                    accumulate(grads, *bias, cols, |s| {
                        for (j, gj) in g.iter().enumerate() {
                            s[j % cols] += gj;
                        }
                    });
                }
                if rg(*x) {
                    accumulate(grads, *x, g.len(), |s| {
                        let n = cols as f64;
                        for (r, is) in inv_std.iter().enumerate() {
                            let base = r * cols;
                            let dxh: Vec<f64> = (0..cols).map(|c| g[base + c] * gv[c]).collect();
                            let mean_d = dxh.iter().sum::<f64>() / n;
                            let mean_dx =
                                (0..cols).map(|c| dxh[c] * xhat[base + c]).sum::<f64>() / n;
                            for c in 0..cols {
                                s[base + c] += is * (dxh[c] - mean_d - xhat[base + c] * mean_dx);
                            }
                        }
                    });
                }
            }
            Op::Gelu { x } => {
                let xv = nodes[x.0].value.data();
                accumulate(grads, *x, g.len(), |s| {
                    for j in 0..g.len() {
                        let a = xv[j];
                        let u = GELU_C * (a + GELU_A * a * a * a);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * a * a);
                        let d = 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * du;
                        s[j] += g[j] * d;
                    }
                })
            }
            Op::Gather {
                table,
                indices,
                cols,
            } => {
                let cols = *cols;
                accumulate(grads, *table, numel(*table), |s| {
                    for (r, &idx) in indices.iter().enumerate() {
                        for c in 0..cols {
                            s[idx * cols + c] += g[r * cols + c];
                        }
                    }
                })
            }
            Op::Slice {
                x,
                in_cols,
                rows,
                cols,
            } => {
                let w = cols.len();
                accumulate(grads, *x, numel(*x), |s| {
                    for (ri, r) in rows.clone().enumerate() {
                        for (ci, c) in cols.clone().enumerate() {
                            s[r * in_cols + c] += g[ri * w + ci];
                        }
                    }
                })
            }
            Op::Concat { parts, axis } => {
                let total_cols: usize = if *axis == 1 {
                    parts.iter().map(|p| p.2).sum()
                } else {
                    parts[0].2
                };
                let mut offset = 0;
                for &(p, r, c) in parts {
                    if rg(p) {
                        accumulate(grads, p, r * c, |s| {
                            if *axis == 0 {
                                add_into(s, &g[offset * c..(offset + r) * c]);
                            } else {
                                for row in 0..r {
                                    let src = &g
                                        [row * total_cols + offset..row * total_cols + offset + c];
                                    add_into(&mut s[row * c..(row + 1) * c], src);
                                }
                            }
                        });
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::L2Normalize { x, cols, inv_norms } => {
                let y = node.value.data();
                let cols = *cols;
                accumulate(grads, *x, g.len(), |s| {
                    for (r, inv) in inv_norms.iter().enumerate() {
                        let base = r * cols;
                        let dot: f64 = (0..cols).map(|c| y[base + c] * g[base + c]).sum();
                        for c in 0..cols {
                            s[base + c] += inv * (g[base + c] - y[base + c] * dot);
                        }
                    }
                })
            }
            Op::MaskedFill { x, mask } => accumulate(grads, *x, g.len(), |s| {
                for j in 0..g.len() {
                    if !mask[j] {
                        s[j] += g[j];
                    }
                }
            }),
            Op::Reshape { x } => accumulate(grads, *x, g.len(), |s| add_into(s, g)),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}
