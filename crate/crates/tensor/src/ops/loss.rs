use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::ops::elementwise::sigmoid_scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

pub fn sum(x: &Var) -> Var {
    let value = Tensor::scalar(x.value().sum());
    let shape = x.shape().to_vec();
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![Some(Tensor::full(shape.clone(), g.item()))]),
    )
}

pub fn mean(x: &Var) -> Var {
    let n = x.value().numel().max(1) as f64;
    let value = Tensor::scalar(x.value().sum() / n);
    let shape = x.shape().to_vec();
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![Some(Tensor::full(shape.clone(), g.item() / n))]),
    )
}

/// `sum(x * weights)` for a constant weight tensor; a generic scalar probe
/// for gradient checks.
pub fn dot_const(x: &Var, weights: &Tensor) -> Result<Var> {
    weights.ensure_shape("dot_const", x.shape())?;
    let value = Tensor::scalar(
        x.value()
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum(),
    );
    let w = weights.clone();
    Ok(Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gx = w.clone();
            gx.scale(g.item());
            vec![Some(gx)]
        }),
    ))
}

/// Binary cross-entropy on logits, computed in the overflow-free form
/// `max(z,0) - z*y + ln(1 + exp(-|z|))`, which equals
/// `-y ln s - (1-y) ln(1-s)` with `s = sigmoid(z)`.
pub fn bce_with_logits(logits: &Var, target: &Tensor, reduction: Reduction) -> Result<Var> {
    if logits.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "bce_with_logits",
            expected: logits.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    let total: f64 = logits
        .value()
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        .sum();
    let scale = match reduction {
        Reduction::Mean => 1.0 / logits.value().numel().max(1) as f64,
        Reduction::Sum => 1.0,
    };
    let target = target.clone();
    Ok(Var::from_op(
        Tensor::scalar(total * scale),
        vec![logits.clone()],
        Box::new(move |g, _, inputs| {
            let k = g.item() * scale;
            vec![Some(
                inputs[0].zip_map(&target, |z, y| (sigmoid_scalar(z) - y) * k),
            )]
        }),
    ))
}
