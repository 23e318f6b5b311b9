//! Central finite-difference checks of every differentiable op.

use drsnet_tensor::ops::{self, BatchNormConfig, Conv2dGeometry, Reduction};
use drsnet_tensor::{Param, ParamKind, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Checks d(sum(f(x) * probe))/dx for every input against central differences.
fn check(inputs: Vec<Tensor>, f: impl Fn(&[Var]) -> Var, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let leaves: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&leaves);
    let probe = random(out.shape(), &mut rng);
    let loss = ops::dot_const(&out, &probe).unwrap();
    let grads = loss.backward();
    let eps = 1e-6;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(&leaves[i]).expect("missing gradient").clone();
        for j in 0..x.numel() {
            let eval = |delta: f64| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let mut t = t.clone();
                        if k == i {
                            t.data_mut()[j] += delta;
                        }
                        Var::constant(t)
                    })
                    .collect();
                ops::dot_const(&f(&vars), &probe).unwrap().value().item()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / (1.0 + numeric.abs());
            assert!(err < tol, "input {i} elem {j}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(kh, kw, dil) in &[(3, 1, 2), (1, 3, 1), (1, 1, 1), (3, 3, 1)] {
        let x = random(&[2, 3, 5, 6], &mut rng);
        let w = random(&[2, 3, kh, kw], &mut rng);
        let b = random(&[2], &mut rng);
        let g = Conv2dGeometry::same(kh, kw, (dil, dil));
        check(vec![x, w, b], |v| ops::conv2d(&v[0], &v[1], Some(&v[2]), g).unwrap(), 1e-6);
    }
}

#[test]
fn batch_norm_gradients_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for training in [true, false] {
        let x = random(&[2, 3, 3, 4], &mut rng);
        let gamma = random(&[3], &mut rng);
        let beta = random(&[3], &mut rng);
        let rm = Param::new("rm", ParamKind::RunningMean, Tensor::full([3], 0.2));
        let rv = Param::new("rv", ParamKind::RunningVar, Tensor::full([3], 1.5));
        check(
            vec![x, gamma, beta],
            |v| {
                ops::batch_norm(&v[0], &v[1], &v[2], &rm, &rv, training, BatchNormConfig::default())
                    .unwrap()
            },
            1e-5,
        );
    }
}

#[test]
fn resize_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(h, w, ho, wo) in &[(4, 6, 2, 3), (2, 3, 8, 12), (5, 7, 3, 11)] {
        let x = random(&[1, 2, h, w], &mut rng);
        check(vec![x], |v| ops::resize_bilinear(&v[0], ho, wo).unwrap(), 1e-7);
    }
}

#[test]
fn elementwise_and_shape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&[2, 4, 3, 3], &mut rng);
    let b = random(&[2, 4, 3, 3], &mut rng);
    let s = random(&[2, 4, 1, 1], &mut rng);
    check(vec![a.clone(), b.clone()], |v| ops::add(&v[0], &v[1]).unwrap(), 1e-7);
    check(vec![a.clone()], |v| ops::sigmoid(&v[0]), 1e-7);
    check(vec![a.clone(), s], |v| ops::mul_channel(&v[0], &v[1]).unwrap(), 1e-7);
    check(vec![a.clone()], |v| ops::global_avg_pool(&v[0]).unwrap(), 1e-7);
    check(vec![a.clone(), b], |v| ops::concat_channels(&v[..]).unwrap(), 1e-7);
    check(vec![a], |v| ops::slice_channels(&v[0], 1, 2).unwrap(), 1e-7);
}

#[test]
fn relu_gradient_away_from_kink() {
    let x = Tensor::new([1, 1, 1, 4], vec![-0.7, -0.2, 0.3, 0.9]).unwrap();
    check(vec![x], |v| ops::relu(&v[0]), 1e-7);
}

#[test]
fn bce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = random(&[1, 1, 4, 4], &mut rng);
    let y = Tensor::from_fn([1, 1, 4, 4], |i| (i % 3 == 0) as u8 as f64);
    for red in [Reduction::Mean, Reduction::Sum] {
        check(vec![z.clone()], |v| ops::bce_with_logits(&v[0], &y, red).unwrap(), 1e-7);
    }
}

#[test]
fn parameter_gradients_accumulate() {
    let w = Param::new("w", ParamKind::Weight, Tensor::full([1, 1, 1, 1], 2.0));
    let x = Var::constant(Tensor::full([1, 1, 2, 2], 3.0));
    for _ in 0..2 {
        let y = ops::conv2d(&x, &w.var(true), None, Conv2dGeometry::default()).unwrap();
        ops::sum(&y).backward();
    }
    assert_eq!(w.grad().unwrap().data(), &[24.0]);
    w.zero_grad();
    assert!(w.grad().is_none_or(|g| g.data() == [0.0]));
}
