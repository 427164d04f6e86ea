use mtembed::autodiff::Tensor;
use mtembed::encoder::{apply_rope_at, EncoderModel, ModelConfig, TokenBatch};
use mtembed::task::TaskKind;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 24,
        max_seq_len: 12,
        mrl_dims: vec![4, 8, 16],
        seed,
        ..ModelConfig::default()
    }
}

/// Model with every adapter attached and random (non-zero) B factors.
pub fn model_with_live_adapters(seed: u64) -> EncoderModel {
    let mut m = EncoderModel::new(small_config(seed)).unwrap();
    let mut r = super::rng(seed ^ 0xabc);
    for t in TaskKind::ALL {
        m.add_adapter(t);
        for pair in m.adapter_mut(t).unwrap().matrices.values_mut() {
            for v in pair.b.data_mut() {
                *v = r.random_range(-0.3..0.3);
            }
        }
    }
    m
}

pub fn random_sequences(
    rng: &mut ChaCha8Rng,
    n: usize,
    vocab: usize,
    max_len: usize,
) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len).map(|_| rng.random_range(3..vocab)).collect()
        })
        .collect()
}

pub fn random_heads(rng: &mut ChaCha8Rng, heads: usize, len: usize, hd: usize) -> Tensor {
    let data = (0..heads * len * hd)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(vec![heads, len, hd], data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vec_at(t: &Tensor, h: usize, p: usize) -> &[f64] {
    let (len, hd) = (t.shape()[1], t.shape()[2]);
    &t.data()[(h * len + p) * hd..(h * len + p + 1) * hd]
}

/// Largest change of any vector when rotated at position 0.
pub fn rope_zero_position_error(rng: &mut ChaCha8Rng, base: f64) -> f64 {
    let x = random_heads(rng, 3, 1, 8);
    let y = apply_rope_at(&x, &[0.0], base).unwrap();
    x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Largest per-position norm change over positions 0..len.
pub fn rope_norm_error(rng: &mut ChaCha8Rng, base: f64) -> f64 {
    let (heads, len, hd) = (2, 40, 8);
    let x = random_heads(rng, heads, len, hd);
    let positions: Vec<f64> = (0..len).map(|p| p as f64).collect();
    let y = apply_rope_at(&x, &positions, base).unwrap();
    let mut worst: f64 = 0.0;
    for h in 0..heads {
        for p in 0..len {
            let a = dot(vec_at(&x, h, p), vec_at(&x, h, p)).sqrt();
            let b = dot(vec_at(&y, h, p), vec_at(&y, h, p)).sqrt();
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Largest change of the full query-key logit matrix when every position is
/// shifted by the same offset.
pub fn rope_shift_error(rng: &mut ChaCha8Rng, base: f64) -> f64 {
    let (heads, len, hd) = (2, 24, 8);
    let q = random_heads(rng, heads, len, hd);
    let k = random_heads(rng, heads, len, hd);
    let shift = rng.random_range(1..500) as f64;
    let at = |offset: f64| -> (Tensor, Tensor) {
        let pos: Vec<f64> = (0..len).map(|p| p as f64 + offset).collect();
        (
            apply_rope_at(&q, &pos, base).unwrap(),
            apply_rope_at(&k, &pos, base).unwrap(),
        )
    };
    let (q0, k0) = at(0.0);
    let (q1, k1) = at(shift);
    let mut worst: f64 = 0.0;
    for h in 0..heads {
        for i in 0..len {
            for j in 0..len {
                let a = dot(vec_at(&q0, h, i), vec_at(&k0, h, j));
                let b = dot(vec_at(&q1, h, i), vec_at(&k1, h, j));
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Largest gap between base outputs and outputs through fresh (B = 0)
/// adapters, over every task and `batches` random batches.
pub fn lora_identity_error(seed: u64, batches: usize) -> f64 {
    let mut m = EncoderModel::new(small_config(seed)).unwrap();
    for t in TaskKind::ALL {
        m.add_adapter(t);
    }
    let mut r = super::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let seqs = random_sequences(&mut r, 4, 50, 10);
        let batch = TokenBatch::from_sequences(&seqs, 12);
        let base = m.encode_states(&batch, None, 10_000.0).unwrap();
        for t in TaskKind::ALL {
            let adapted = m.encode_states(&batch, Some(t), 10_000.0).unwrap();
            for (a, b) in base.data().iter().zip(adapted.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}
