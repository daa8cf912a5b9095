use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, Tolerance};
use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `out` with a fixed random tensor so every output coordinate
/// contributes a distinct weight to the scalar.
fn probe(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(out));
    let w = g.constant(w)?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn assert_grad<F>(inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let report = check_inputs(
        &inputs,
        |g, v| {
            let out = f(g, v)?;
            probe(g, out, 99)
        },
        20,
        Tolerance::OP,
        &mut rng,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn value_of(f: impl FnOnce(&mut Graph) -> Result<Var>) -> Tensor {
    let mut g = Graph::detached();
    let v = f(&mut g).unwrap();
    g.value(v).clone()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn tensor_rejects_bad_shapes() {
    assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(&[0], vec![]).is_err());
}

#[test]
fn matmul_examples() {
    let out = value_of(|g| {
        let a = g.constant(t(&[2, 2], &[1., 0., 0., 1.]))?;
        let b = g.constant(t(&[2, 2], &[3., 4., 5., 6.]))?;
        g.matmul(a, b)
    });
    assert_eq!(out.data(), &[3., 4., 5., 6.]);
    let out = value_of(|g| {
        let a = g.constant(t(&[1, 2], &[1., 2.]))?;
        let b = g.constant(t(&[2, 1], &[3., 4.]))?;
        g.matmul(a, b)
    });
    assert_eq!(out.data(), &[11.]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::detached();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    assert!(matches!(g.matmul(a, b), Err(TensorError::Shape { .. })));
}

#[test]
fn matmul_sum_gradient_is_ones_times_b_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let mut g = Graph::detached();
    let va = g.input(a.clone()).unwrap();
    let vb = g.constant(b.clone()).unwrap();
    let c = g.matmul(va, vb).unwrap();
    let s = g.sum(c).unwrap();
    let grads = g.backward(s).unwrap();
    let ga = grads.wrt(va).unwrap();
    // ones(3x2) · bᵀ: every row equals the row sums of b
    for i in 0..3 {
        for k in 0..4 {
            let want = b.data()[k * 2] + b.data()[k * 2 + 1];
            assert!((ga.data()[i * 4 + k] - want).abs() < 1e-12);
        }
    }
    let report = check_inputs(
        &[a, b],
        |g, v| {
            let c = g.matmul(v[0], v[1])?;
            g.sum(c)
        },
        20,
        Tolerance::OP,
        &mut rng,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn softmax_examples() {
    let out = value_of(|g| {
        let x = g.constant(t(&[2], &[0., 0.]))?;
        g.softmax(x)
    });
    assert_eq!(out.data(), &[0.5, 0.5]);

    let out = value_of(|g| {
        let x = g.constant(t(&[2], &[1000., 0.]))?;
        g.softmax(x)
    });
    assert!((out.data()[0] - 1.0).abs() < 1e-12 && out.data()[1].abs() < 1e-12);

    // direct exp-normalize, evaluated without max subtraction
    let out = value_of(|g| {
        let x = g.constant(t(&[3], &[1., 2., 3.]))?;
        g.softmax(x)
    });
    let e: Vec<f64> = [1f64, 2., 3.].iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    for i in 0..3 {
        assert!((out.data()[i] - e[i] / z).abs() < 1e-15);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[5, 7]).reshaped(&[5, 7]).unwrap();
    let out = value_of(|g| {
        let v = g.constant(x.clone())?;
        let v = g.scale(v, 20.0)?;
        g.softmax(v)
    });
    for r in 0..5 {
        let s: f64 = out.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(out.row(r).iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn layer_norm_examples() {
    let ln = |x: Tensor, eps: f64| {
        let h = x.shape()[x.rank() - 1];
        value_of(|g| {
            let x = g.constant(x)?;
            let gain = g.constant(Tensor::ones(&[h]))?;
            let bias = g.constant(Tensor::zeros(&[h]))?;
            g.layer_norm(x, gain, bias, eps)
        })
    };
    let out = ln(t(&[1, 4], &[5., 5., 5., 5.]), 1e-5);
    assert!(out.data().iter().all(|&v| v == 0.0));

    let out = ln(t(&[1, 2], &[1., -1.]), 1e-15);
    assert!((out.data()[0] - 1.0).abs() < 1e-9 && (out.data()[1] + 1.0).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[4, 8]);
    let out = ln(x, 1e-5);
    for r in 0..4 {
        let row = out.row(r);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-9);
        // eps shrinks the variance by var/(var+eps); rows here have var ~0.3
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
}

#[test]
fn layer_norm_unit_variance_without_eps() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[4, 8]);
    let out = value_of(|g| {
        let x = g.constant(x)?;
        let gain = g.constant(Tensor::ones(&[8]))?;
        let bias = g.constant(Tensor::zeros(&[8]))?;
        g.layer_norm(x, gain, bias, 0.0)
    });
    for r in 0..4 {
        let row = out.row(r);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn elementwise_examples() {
    let out = value_of(|g| {
        let x = g.constant(t(&[2], &[-2., 3.]))?;
        g.relu(x)
    });
    assert_eq!(out.data(), &[0., 3.]);
    let out = value_of(|g| {
        let x = g.constant(t(&[1], &[0.]))?;
        g.sigmoid(x)
    });
    assert_eq!(out.data(), &[0.5]);
}

#[test]
fn split_inverts_concat_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for axis in 0..3 {
        let mut sa = vec![2, 3, 4];
        let mut sb = sa.clone();
        sa[axis] = 2;
        sb[axis] = 5;
        let a = rand_tensor(&mut rng, &sa);
        let b = rand_tensor(&mut rng, &sb);
        let mut g = Graph::detached();
        let va = g.constant(a.clone()).unwrap();
        let vb = g.constant(b.clone()).unwrap();
        let c = g.concat(&[va, vb], axis).unwrap();
        let parts = g.split(c, axis, &[2, 5]).unwrap();
        assert_eq!(g.value(parts[0]), &a);
        assert_eq!(g.value(parts[1]), &b);
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::detached();
    let w = g.input(t(&[3], &[0.3, -2., 5.])).unwrap();
    let s = g.sum(w).unwrap();
    assert_eq!(g.backward(s).unwrap().wrt(w).unwrap().data(), &[1., 1., 1.]);

    let mut g = Graph::detached();
    let w = g.input(t(&[2], &[1., 2.])).unwrap();
    let w2 = g.mul(w, w).unwrap();
    let s = g.sum(w2).unwrap();
    let half = g.scale(s, 0.5).unwrap();
    assert_eq!(g.backward(half).unwrap().wrt(w).unwrap().data(), &[1., 2.]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::detached();
    let w = g.input(Tensor::zeros(&[3])).unwrap();
    assert!(matches!(g.backward(w), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn non_finite_values_are_errors() {
    let mut g = Graph::detached();
    assert!(g.constant(t(&[1], &[f64::NAN])).is_err());
    let x = g.constant(t(&[1], &[1e300])).unwrap();
    assert!(matches!(g.mul(x, x), Err(TensorError::NonFinite { .. })));
}

#[test]
fn param_leaves_are_shared() {
    let mut store = ParamStore::new();
    let id = store.add("w", t(&[2], &[1., 2.]));
    let mut g = Graph::new(&store);
    let a = g.param(id);
    let b = g.param(id);
    assert_eq!(a, b);
    let s = g.mul(a, b).unwrap();
    let l = g.sum(s).unwrap();
    let grads = g.backward(l).unwrap();
    let (pid, grad) = grads.params().next().unwrap();
    assert_eq!(pid, id);
    assert_eq!(grad.data(), &[2., 4.]);
}

#[test]
fn gradients_of_binary_and_unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[3, 4]);
    assert_grad(vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    assert_grad(vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    assert_grad(vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    assert_grad(vec![a.clone()], |g, v| g.scale(v[0], -1.7));
    assert_grad(vec![a.clone()], |g, v| g.relu(v[0]));
    assert_grad(vec![a.clone()], |g, v| g.sigmoid(v[0]));
    assert_grad(vec![a.clone()], |g, v| g.tanh(v[0]));
    assert_grad(vec![a.clone()], |g, v| g.softmax(v[0]));
    assert_grad(vec![a.clone()], |g, v| g.transpose(v[0]));
    assert_grad(vec![a.clone()], |g, v| g.reshape(v[0], &[2, 6]));
    assert_grad(vec![a.clone()], |g, v| g.sum(v[0]));
    assert_grad(vec![a.clone()], |g, v| g.mean(v[0]));
}

#[test]
fn gradients_of_broadcast_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    for small in [vec![4], vec![3, 1], vec![2, 1, 4], vec![1, 1, 1]] {
        let b = rand_tensor(&mut rng, &small);
        assert_grad(vec![a.clone(), b.clone()], |g, v| g.add_bcast(v[0], v[1]));
        assert_grad(vec![a.clone(), b], |g, v| g.mul_bcast(v[0], v[1]));
    }
}

#[test]
fn gradients_of_products_and_layout_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let w = rand_tensor(&mut rng, &[4, 5]);
    assert_grad(vec![a.clone(), w], |g, v| g.matmul(v[0], v[1]));
    let b = rand_tensor(&mut rng, &[2, 4, 3]);
    assert_grad(vec![a.clone(), b], |g, v| g.bmm(v[0], v[1]));
    let x4 = rand_tensor(&mut rng, &[2, 3, 2, 2]);
    assert_grad(vec![x4], |g, v| g.permute(v[0], &[0, 2, 1, 3]));
    let c = rand_tensor(&mut rng, &[2, 1, 4]);
    assert_grad(vec![a.clone(), c], |g, v| g.concat(&[v[0], v[1]], 1));
    assert_grad(vec![a], |g, v| g.narrow(v[0], 2, 1, 2));
}

#[test]
fn gradients_of_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = rand_tensor(&mut rng, &[3, 6]);
    let gain = rand_tensor(&mut rng, &[6]);
    let bias = rand_tensor(&mut rng, &[6]);
    assert_grad(vec![x, gain, bias], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
}

#[test]
fn gradients_of_cnn_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let x = rand_tensor(&mut rng, &[2, 2, 6, 6]);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    assert_grad(vec![x.clone(), w.clone(), b], |g, v| g.conv2d(v[0], v[1], Some(v[2])));
    assert_grad(vec![x.clone(), w], |g, v| g.conv2d(v[0], v[1], None));
    assert_grad(vec![x.clone()], |g, v| g.max_pool2d(v[0]));
    assert_grad(vec![x], |g, v| g.global_avg_pool(v[0]));
}

#[test]
fn conv2d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let x = rand_tensor(&mut rng, &[1, 2, 5, 4]);
    let w = rand_tensor(&mut rng, &[2, 2, 2, 2]);
    let out = value_of(|g| {
        let xv = g.constant(x.clone())?;
        let wv = g.constant(w.clone())?;
        g.conv2d(xv, wv, None)
    });
    assert_eq!(out.shape(), &[1, 2, 4, 3]);
    let xi = |c: usize, i: usize, j: usize| x.data()[(c * 5 + i) * 4 + j];
    let wi = |o: usize, c: usize, i: usize, j: usize| w.data()[((o * 2 + c) * 2 + i) * 2 + j];
    for o in 0..2 {
        for i in 0..4 {
            for j in 0..3 {
                let mut s = 0.0;
                for c in 0..2 {
                    for ki in 0..2 {
                        for kj in 0..2 {
                            s += xi(c, i + ki, j + kj) * wi(o, c, ki, kj);
                        }
                    }
                }
                assert!((out.data()[(o * 4 + i) * 3 + j] - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gradients_of_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let p = Tensor::new(&[5], (0..5).map(|_| rng.gen_range(0.1..0.9)).collect()).unwrap();
    let y: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let report = check_inputs(&[p], |g, v| g.bce(v[0], &y), 20, Tolerance::OP, &mut rng).unwrap();
    assert!(report.passed(), "{report:?}");

    let logits = rand_tensor(&mut rng, &[4, 3]);
    let labels = [0, 2, 1, 2];
    let report = check_inputs(
        &[logits],
        |g, v| g.softmax_cross_entropy(v[0], &labels),
        20,
        Tolerance::OP,
        &mut rng,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let a = rand_tensor(&mut rng, &[8, 16]);
    let w = rand_tensor(&mut rng, &[16, 16]);
    let run = || {
        value_of(|g| {
            let x = g.constant(a.clone())?;
            let w = g.constant(w.clone())?;
            let y = g.matmul(x, w)?;
            g.softmax(y)
        })
    };
    assert_eq!(run().data(), run().data());
}
