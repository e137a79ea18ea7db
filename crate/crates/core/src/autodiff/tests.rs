use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::params::ParameterStore;
use crate::tensor::Tensor;

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn store_of(tensors: Vec<(&str, Tensor)>) -> ParameterStore {
    let mut s = ParameterStore::new();
    for (n, t) in tensors {
        s.insert(n, t, true).unwrap();
    }
    s
}

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_arithmetic() {
    let mut g = Graph::new();
    let i2 = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
    let a = g.constant(mat(&[&[1.5, -2.0, 3.0], &[0.25, 4.0, -1.0]])).unwrap();
    let y = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(y), g.value(a));

    let p = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
    let q = g.constant(mat(&[&[5.0], &[6.0]])).unwrap();
    let r = g.matmul(p, q).unwrap();
    assert_eq!(g.value(r).values(), &[17.0, 39.0]);
}

#[test]
fn uniform_softmax_loss_is_ln_classes() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(mat(&[&[0.0, 0.0, 0.0]])).unwrap();
    let l = g.softmax_cross_entropy(z, &[1]).unwrap();
    assert!((g.value(l).item().unwrap() - 3f64.ln()).abs() < 1e-15);
}

#[test]
fn shape_errors_name_kernel_and_extents() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(vec![2, 3])).unwrap();
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3] x [2, 3]"), "{err}");
    let bias = g.constant(Tensor::zeros(vec![2])).unwrap();
    assert!(matches!(g.add_bias(a, bias), Err(Error::Shape { kernel: "add_bias", .. })));
}

#[test]
fn non_finite_output_is_an_error() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(mat(&[&[1e300]])).unwrap();
    assert!(matches!(g.matmul(a, a), Err(Error::NonFinite(_))));
}

#[test]
fn linear_and_quadratic_gradients() {
    // loss = w * x, x = 3
    let s = store_of(vec![("w", mat(&[&[0.7]]))]);
    let mut g = Graph::new();
    let w = g.bind_params(&s).unwrap()[0];
    let x = g.constant(mat(&[&[3.0]])).unwrap();
    let loss = g.matmul(w, x).unwrap();
    let grads = g.backward(loss, &s).unwrap();
    assert_eq!(grads.entry(0), &[3.0]);

    // loss = w^2, w = 2
    let s = store_of(vec![("w", mat(&[&[2.0]]))]);
    let mut g = Graph::new();
    let w = g.bind_params(&s).unwrap()[0];
    let loss = g.matmul(w, w).unwrap();
    let grads = g.backward(loss, &s).unwrap();
    assert_eq!(grads.entry(0), &[4.0]);
    assert_eq!(g.grad(w), Some(&[4.0][..]));
}

#[test]
fn backward_rejects_non_scalar_and_reuse() {
    let s = store_of(vec![("w", Tensor::zeros(vec![2, 2]))]);
    let mut g = Graph::new();
    let w = g.bind_params(&s).unwrap()[0];
    let y = g.tanh(w).unwrap();
    assert!(matches!(g.backward(y, &s), Err(Error::Graph(_))));

    let mut g = Graph::new();
    let w = g.bind_params(&s).unwrap()[0];
    let l = g.softmax_cross_entropy(w, &[0, 1]).unwrap();
    g.backward(l, &s).unwrap();
    assert!(matches!(g.backward(l, &s), Err(Error::Graph(_))));
}

#[test]
fn unreachable_parameters_get_zero_gradient() {
    let s = store_of(vec![("used", mat(&[&[1.0, 2.0]])), ("unused", mat(&[&[5.0]]))]);
    let mut g = Graph::new();
    let ids = g.bind_params(&s).unwrap();
    let l = g.softmax_cross_entropy(ids[0], &[1]).unwrap();
    let grads = g.backward(l, &s).unwrap();
    assert_eq!(grads.entry(1), &[0.0]);
    assert!(grads.entry(0).iter().all(|v| *v != 0.0));
}

/// y = W x + b; loss = v . y. dL/dW = v x^T, dL/db = v.
#[test]
fn affine_network_matches_analytic_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = random(&mut rng, vec![3, 4]);
    let b = random(&mut rng, vec![4]);
    let x = random(&mut rng, vec![2, 3]);
    let v = random(&mut rng, vec![4, 1]);
    let s = store_of(vec![("w", w), ("b", b)]);
    let mut g = Graph::new();
    let ids = g.bind_params(&s).unwrap();
    let xn = g.constant(x.clone()).unwrap();
    let xw = g.matmul(xn, ids[0]).unwrap();
    let y = g.add_bias(xw, ids[1]).unwrap();
    let vn = g.constant(v.clone()).unwrap();
    let per_row = g.matmul(y, vn).unwrap();
    // Sum the two rows with a ones vector to reach a scalar.
    let ones = g.constant(mat(&[&[1.0, 1.0]])).unwrap();
    let loss = g.matmul(ones, per_row).unwrap();
    let grads = g.backward(loss, &s).unwrap();

    for i in 0..3 {
        for j in 0..4 {
            let xsum: f64 = (0..2).map(|r| x.values()[r * 3 + i]).sum();
            let expected = xsum * v.values()[j];
            assert!((grads.entry(0)[i * 4 + j] - expected).abs() < 1e-12);
        }
    }
    for j in 0..4 {
        assert!((grads.entry(1)[j] - 2.0 * v.values()[j]).abs() < 1e-12);
    }
}

/// Builds a scalar loss touching one kernel and checks it against finite differences.
/// Every loss ends in concat -> matmul -> softmax cross-entropy, so those kernels
/// are exercised on every case.
fn check_kernel(kind: OpKind, seed: u64, rows: usize, cols: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = cols + 1;
    let mut a = random(&mut rng, vec![rows, cols]);
    if kind == OpKind::Relu {
        // Keep inputs away from the kink.
        a.values_mut().iter_mut().filter(|v| v.abs() < 0.1).for_each(|v| *v += 0.3);
    }
    let b = match kind {
        OpKind::MatMul => random(&mut rng, vec![cols, classes]),
        OpKind::AddBias => random(&mut rng, vec![cols]),
        OpKind::Embedding => random(&mut rng, vec![rows + 1, cols]),
        _ => random(&mut rng, vec![rows, cols]),
    };
    let hcols = if kind == OpKind::MatMul { classes } else { cols };
    let head = random(&mut rng, vec![2 * hcols, classes]);
    let store = store_of(vec![("a", a), ("b", b), ("head", head)]);
    let split = rows.div_ceil(2);
    let segments = vec![0..split, split..rows];

    let build = |s: &ParameterStore, g: &mut Graph| -> crate::error::Result<NodeId> {
        let ids = g.bind_params(s)?;
        let (a, b, head) = (ids[0], ids[1], ids[2]);
        let h = match kind {
            OpKind::MatMul => g.matmul(a, b)?,
            OpKind::AddBias => g.add_bias(a, b)?,
            OpKind::Add | OpKind::Concat | OpKind::SoftmaxCrossEntropy => g.add(a, b)?,
            OpKind::Tanh => g.tanh(a)?,
            OpKind::Relu => g.relu(a)?,
            OpKind::Embedding => {
                let idx: Vec<usize> = (0..rows).map(|r| (r * 7 + 1) % (rows + 1)).collect();
                let e = g.embedding(b, &idx)?;
                g.add(e, a)?
            }
            OpKind::MeanPool => {
                let t = g.tanh(a)?;
                let segs: Vec<_> = segments.iter().filter(|s| !s.is_empty()).cloned().collect();
                g.mean_pool(t, &segs)?
            }
            OpKind::Constant | OpKind::Param => unreachable!(),
        };
        let h = g.tanh(h)?;
        let c = g.concat(h, h)?;
        let z = g.matmul(c, head)?;
        let n = g.value(z).dims2().unwrap().0;
        let targets: Vec<usize> = (0..n).map(|r| r % classes).collect();
        g.softmax_cross_entropy(z, &targets)
    };

    let mut g = Graph::new();
    let loss = build(&store, &mut g).unwrap();
    let analytic = g.backward(loss, &store).unwrap();
    let numeric = fd_gradient(
        |s| {
            let mut g = Graph::new();
            let l = build(s, &mut g)?;
            Ok(g.value(l).item().unwrap())
        },
        &store,
        1e-5,
    )
    .unwrap();
    max_relative_error(&analytic, &numeric)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn every_kernel_matches_finite_differences(
        seed in 0u64..1000,
        rows in 2usize..5,
        cols in 2usize..5,
        which in 0usize..9,
    ) {
        let kinds = [
            OpKind::MatMul, OpKind::AddBias, OpKind::Add, OpKind::Tanh, OpKind::Relu,
            OpKind::Embedding, OpKind::MeanPool, OpKind::Concat, OpKind::SoftmaxCrossEntropy,
        ];
        let err = check_kernel(kinds[which], seed, rows, cols);
        prop_assert!(err < 1e-4, "{:?}: {}", kinds[which], err);
    }
}

#[test]
fn embedding_rejects_out_of_range_index() {
    let mut g = Graph::<f64>::new();
    let t = g.constant(Tensor::zeros(vec![3, 2])).unwrap();
    assert!(g.embedding(t, &[0, 3]).is_err());
}

#[test]
fn mean_pool_averages_segments() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0], &[10.0, 20.0]])).unwrap();
    let p = g.mean_pool(x, &[0..2, 2..3]).unwrap();
    assert_eq!(g.value(p).values(), &[2.0, 3.0, 10.0, 20.0]);
    assert!(g.mean_pool(x, &[0..4]).is_err());
}
