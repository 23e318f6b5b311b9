use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub fn add(a: &Var, b: &Var) -> Result<Var> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "add",
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    let value = a.value().zip_map(b.value(), |x, y| x + y);
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
    ))
}

pub fn relu(x: &Var) -> Var {
    let value = x.value().map(|v| v.max(0.0));
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, out, _| vec![Some(g.zip_map(out, |g, y| if y > 0.0 { g } else { 0.0 }))]),
    )
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Var) -> Var {
    let value = x.value().map(sigmoid_scalar);
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, out, _| vec![Some(g.zip_map(out, |g, s| g * s * (1.0 - s)))]),
    )
}

/// Scales each (sample, channel) plane of `x` (N,C,H,W) by `s` (N,C,1,1).
pub fn mul_channel(x: &Var, s: &Var) -> Result<Var> {
    let [n, c, h, w] = x.value().dims4("mul_channel")?;
    s.value().ensure_shape("mul_channel", &[n, c, 1, 1])?;
    let hw = h * w;
    let mut out = x.value().clone();
    for (plane, &k) in out.data_mut().chunks_mut(hw).zip(s.value().data()) {
        for v in plane {
            *v *= k;
        }
    }
    Ok(Var::from_op(
        out,
        vec![x.clone(), s.clone()],
        Box::new(move |g, _, inputs| {
            let (xv, sv) = (inputs[0], inputs[1]);
            let mut gx = g.clone();
            let mut gs = Tensor::zeros(sv.shape().to_vec());
            for (i, ((gplane, xplane), &k)) in gx
                .data_mut()
                .chunks_mut(hw)
                .zip(xv.data().chunks(hw))
                .zip(sv.data())
                .enumerate()
            {
                let mut acc = 0.0;
                for (gv, &xv) in gplane.iter_mut().zip(xplane) {
                    acc += *gv * xv;
                    *gv *= k;
                }
                gs.data_mut()[i] = acc;
            }
            vec![Some(gx), Some(gs)]
        }),
    ))
}
