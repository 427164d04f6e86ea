use mtembed::autodiff::{grad_check, Graph, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces an arbitrary output to a scalar through fixed random weights so
/// that every output coordinate contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k) = a.dims2().unwrap();
    let (_, n) = b.dims2().unwrap();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

fn check_unary(
    name: &str,
    lo: f64,
    hi: f64,
    op: impl Fn(&mut Graph, Var) -> Result<Var, TensorError>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let rows = rng.random_range(1..5);
        let cols = rng.random_range(1..6);
        let x = random_tensor(&mut rng, &[rows, cols], lo, hi);
        let err = grad_check(
            |g, v| {
                let y = op(g, v)?;
                weighted_sum(g, y, trial)
            },
            &x,
            H,
        )
        .unwrap();
        assert!(err < TOL, "{name}: trial {trial} error {err}");
    }
}

#[test]
fn unary_primitives_match_finite_differences() {
    check_unary("exp", -2.0, 2.0, |g, x| g.exp(x));
    check_unary("log", 0.5, 3.0, |g, x| g.log(x));
    check_unary("pow", 0.5, 2.0, |g, x| g.pow(x, 2.5));
    check_unary("gelu", -3.0, 3.0, |g, x| g.gelu(x));
    check_unary("softmax", -2.0, 2.0, |g, x| g.softmax(x));
    check_unary("transpose", -1.0, 1.0, |g, x| g.transpose(x));
    check_unary("add_scalar", -1.0, 1.0, |g, x| g.add_scalar(x, 0.3));
    check_unary("mul_scalar", -1.0, 1.0, |g, x| g.mul_scalar(x, -1.7));
    check_unary("sum_axis0", -1.0, 1.0, |g, x| g.sum_axis(x, 0));
    check_unary("mean_axis1", -1.0, 1.0, |g, x| g.mean_axis(x, 1));
    check_unary("mean_all", -1.0, 1.0, |g, x| g.mean_all(x));
    check_unary("l2_normalize", 0.2, 2.0, |g, x| g.l2_normalize_rows(x));
    check_unary("logsumexp", -2.0, 2.0, |g, x| g.logsumexp_rows(x));
    check_unary("reshape", -1.0, 1.0, |g, x| {
        let n = g.value(x).numel();
        g.reshape(x, &[n, 1])
    });
    check_unary("masked_fill", -1.0, 1.0, |g, x| {
        let n = g.value(x).numel();
        let mask: Vec<bool> = (0..n).map(|i| i % 3 == 1).collect();
        g.masked_fill(x, &mask, -5.0)
    });
    check_unary("slice", -1.0, 1.0, |g, x| {
        let (r, c) = g.value(x).dims2()?;
        g.slice(x, r / 2..r, 0..c.div_ceil(2))
    });
    check_unary("concat0", -1.0, 1.0, |g, x| {
        let e = g.exp(x)?;
        g.concat(&[x, e], 0)
    });
    check_unary("concat1", -1.0, 1.0, |g, x| {
        let e = g.exp(x)?;
        g.concat(&[e, x, e], 1)
    });
    check_unary("gather", -1.0, 1.0, |g, x| {
        let (r, _) = g.value(x).dims2()?;
        let idx: Vec<usize> = (0..2 * r + 1).map(|i| (i * 7) % r).collect();
        g.gather_rows(x, &idx)
    });
}

#[test]
fn binary_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let m = rng.random_range(1..5);
        let k = rng.random_range(1..5);
        let n = rng.random_range(1..5);
        let other = random_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let col = random_tensor(&mut rng, &[m, 1], 0.5, 2.0);
        let row = random_tensor(&mut rng, &[1, k], 0.5, 2.0);
        let x = random_tensor(&mut rng, &[m, k], -1.0, 1.0);

        type BinOp = fn(&mut Graph, Var, Var) -> Result<Var, TensorError>;
        let checks: [(&str, &Tensor, BinOp); 5] = [
            ("matmul", &other, |g, a, b| g.matmul(a, b)),
            ("add-col", &col, |g, a, b| g.add(a, b)),
            ("sub-row", &row, |g, a, b| g.sub(a, b)),
            ("mul-col", &col, |g, a, b| g.mul(a, b)),
            ("div-row", &row, |g, a, b| g.div(a, b)),
        ];
        for (name, c, op) in checks {
            // gradient with respect to the left operand
            let err = grad_check(
                |g, v| {
                    let cv = g.constant(c.clone());
                    let y = op(g, v, cv)?;
                    weighted_sum(g, y, trial)
                },
                &x,
                H,
            )
            .unwrap();
            assert!(err < TOL, "{name} lhs trial {trial}: {err}");
            // and with respect to the right operand
            let err = grad_check(
                |g, v| {
                    let xv = g.constant(x.clone());
                    let y = op(g, xv, v)?;
                    weighted_sum(g, y, trial)
                },
                c,
                H,
            )
            .unwrap();
            assert!(err < TOL, "{name} rhs trial {trial}: {err}");
        }
    }
}

#[test]
fn layer_norm_gradients_for_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let rows = rng.random_range(1..5);
        let cols = rng.random_range(2..7);
        let x = random_tensor(&mut rng, &[rows, cols], -2.0, 2.0);
        let gain = random_tensor(&mut rng, &[cols], 0.5, 1.5);
        let bias = random_tensor(&mut rng, &[cols], -0.5, 0.5);
        let ln = |g: &mut Graph, x: Var, gn: Var, b: Var| -> Result<Var, TensorError> {
            let y = g.layer_norm(x, gn, b, 1e-5)?;
            weighted_sum(g, y, trial)
        };
        let e1 = grad_check(
            |g, v| {
                let (gn, b) = (g.constant(gain.clone()), g.constant(bias.clone()));
                ln(g, v, gn, b)
            },
            &x,
            H,
        )
        .unwrap();
        let e2 = grad_check(
            |g, v| {
                let (xv, b) = (g.constant(x.clone()), g.constant(bias.clone()));
                ln(g, xv, v, b)
            },
            &gain,
            H,
        )
        .unwrap();
        let e3 = grad_check(
            |g, v| {
                let (xv, gn) = (g.constant(x.clone()), g.constant(gain.clone()));
                ln(g, xv, gn, v)
            },
            &bias,
            H,
        )
        .unwrap();
        assert!(e1 < TOL && e2 < TOL && e3 < TOL, "{e1} {e2} {e3}");
    }
}

#[test]
fn anchors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let s = g.softmax(x).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let v = g.constant(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
    let n = g.l2_normalize_rows(v).unwrap();
    let d = g.value(n).data();
    assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
}

#[test]
fn cosine_similarity_anchors_and_zero_norm() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 0.0]]).unwrap());
    let b =
        g.constant(Tensor::from_rows(&[vec![2.0, 1.0], vec![0.0, 1.0], vec![1.0, 2.0]]).unwrap());
    let s = g.cosine_similarity_matrix(a, b).unwrap();
    let v = g.value(s).data().to_vec();
    assert!((v[0] - 0.8).abs() < 1e-12);
    assert!((v[2] - 1.0).abs() < 1e-12);
    assert!((v[4] - 0.0).abs() < 1e-12);
    assert!(v.iter().all(|c| c.abs() <= 1.0 + 1e-12));

    let z = g.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
    assert_eq!(
        g.cosine_similarity_matrix(z, b),
        Err(TensorError::ZeroNorm { row: 0 })
    );
}

#[test]
fn backward_anchor_gradients() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum_all(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::full(&[2, 3], 0.7));
    let loss = g.sum_all(x).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_error_paths() {
    let mut g = Graph::new();
    let x = g.param(Tensor::full(&[2], 1.0));
    let y = g.exp(x).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::NotScalar(_))));

    let c = g.constant(Tensor::full(&[2], 1.0));
    let s = g.sum_all(c).unwrap();
    assert_eq!(g.backward(s), Err(TensorError::Detached));

    let loss = g.sum_all(y).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.backward(loss), Err(TensorError::BackwardTwice));
    g.zero_grads();
    g.backward(loss).unwrap();
    let e = std::f64::consts::E;
    assert!((g.grad(x).unwrap().data()[0] - e).abs() < 1e-12);
}

#[test]
fn primitive_error_paths() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(TensorError::Shape(_))));
    assert_eq!(g.div(a, b), Err(TensorError::DivisionByZero));
    assert_eq!(g.log(a), Err(TensorError::LogNonPositive));
    let big = g.constant(Tensor::full(&[1], 1000.0));
    assert!(matches!(g.exp(big), Err(TensorError::NonFinite(_))));
    let c = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, c), Err(TensorError::Shape(_))));
}

#[test]
fn softmax_rows_sum_to_one_and_layer_norm_is_standardised() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let rows = rng.random_range(1..8);
        let cols = rng.random_range(2..16);
        let x = random_tensor(&mut rng, &[rows, cols], -10.0, 10.0);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let s = g.softmax(xv).unwrap();
        for r in g.value(s).data().chunks(cols) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let gain = g.constant(Tensor::full(&[cols], 1.0));
        let bias = g.constant(Tensor::zeros(&[cols]));
        let ln = g.layer_norm(xv, gain, bias, 1e-12).unwrap();
        for r in g.value(ln).data().chunks(cols) {
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn grad_check_on_exact_quadratic() {
    let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
    let err = grad_check(
        |g, v| {
            let sq = g.mul(v, v)?;
            g.sum_all(sq)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-9, "{err}");
    let not_scalar = grad_check(|g, v| g.exp(v), &x, 1e-6);
    assert!(matches!(not_scalar, Err(TensorError::NotScalar(_))));
}

proptest! {
    #[test]
    fn matmul_agrees_with_triple_loop(m in 1usize..17, k in 1usize..17, n in 1usize..17, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[m, k], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let expected = naive_matmul(&a, &b);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a), g.constant(b));
        let c = g.matmul(av, bv).unwrap();
        for (x, y) in g.value(c).data().iter().zip(&expected) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let f1 = |g: &mut Graph, v: Var| -> Result<Var, TensorError> {
            let s = g.softmax(v)?;
            weighted_sum(g, s, 1)
        };
        let f2 = |g: &mut Graph, v: Var| -> Result<Var, TensorError> {
            let e = g.gelu(v)?;
            weighted_sum(g, e, 2)
        };
        let grad_of = |which: u8| {
            let mut g = Graph::new();
            let v = g.param(x.clone());
            let loss = match which {
                1 => f1(&mut g, v).unwrap(),
                2 => f2(&mut g, v).unwrap(),
                _ => {
                    let a = f1(&mut g, v).unwrap();
                    let b = f2(&mut g, v).unwrap();
                    g.add(a, b).unwrap()
                }
            };
            g.backward(loss).unwrap();
            g.grad(v).unwrap().into_data()
        };
        let (g1, g2, g12) = (grad_of(1), grad_of(2), grad_of(3));
        for i in 0..g12.len() {
            prop_assert!((g12[i] - g1[i] - g2[i]).abs() < 1e-12);
        }
    }
}
