#![allow(dead_code)]

use drsnet::nn::{Mode, Module};
use drsnet_tensor::{ops, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
const TRAIN_NO_GRAD: Mode = Mode {
    training: true,
    grad: false,
};

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// `||a - n|| / max(||a||, ||n||)` with a floor for all-zero gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

/// Adds small uniform noise to every trainable parameter. Freshly built
/// blocks sit on ReLU kinks (zero biases after a batch norm whose output has
/// exactly zero channel means), where finite differences are meaningless.
pub fn jitter_params(module: &dyn Module, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in module.params().iter().filter(|p| p.kind().trainable()) {
        p.update(|t| {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        });
    }
}

/// Worst relative error over the input gradient and every trainable
/// parameter gradient (up to `per_param` evenly spaced entries each) of the
/// scalar `sum(forward(x) * probe)` in training mode.
pub fn module_gradcheck(module: &dyn Module, x: &Tensor, per_param: usize) -> f64 {
    let forward = |x: Tensor, mode: Mode| module.forward(&Var::constant(x), mode).unwrap();
    let probe = random_tensor(forward(x.clone(), TRAIN_NO_GRAD).shape(), 17);
    let objective = |x: Tensor| ops::dot_const(&forward(x, TRAIN_NO_GRAD), &probe).unwrap().value().item();

    let params = module.params();
    for p in &params {
        p.zero_grad();
    }
    let leaf = Var::leaf(x.clone());
    let out = module.forward(&leaf, Mode::TRAIN).unwrap();
    let grads = ops::dot_const(&out, &probe).unwrap().backward();
    let dx = grads.get(&leaf).expect("input gradient").clone();

    let numeric_dx: Vec<f64> = (0..x.numel())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = x.clone();
            minus.data_mut()[i] -= FD_STEP;
            (objective(plus) - objective(minus)) / (2.0 * FD_STEP)
        })
        .collect();
    let mut worst = relative_error(dx.data(), &numeric_dx);

    for p in params.iter().filter(|p| p.kind().trainable()) {
        let analytic = p.take_grad().unwrap_or_else(|| Tensor::zeros(p.shape()));
        let n = p.numel();
        let idx: Vec<usize> = (0..per_param.min(n)).map(|k| k * n / per_param.min(n)).collect();
        let original = p.value().clone();
        let mut a = Vec::new();
        let mut num = Vec::new();
        for &i in &idx {
            let eval = |delta: f64| {
                let mut t = original.clone();
                t.data_mut()[i] += delta;
                p.set_value(t);
                objective(x.clone())
            };
            let d = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            num.push(d);
            a.push(analytic.data()[i]);
        }
        p.set_value(original);
        worst = worst.max(relative_error(&a, &num));
    }
    worst
}
