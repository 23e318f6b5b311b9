use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels(xs: &[Var]) -> Result<Var> {
    let first = xs
        .first()
        .ok_or_else(|| TensorError::Invalid("concat_channels: no inputs".into()))?;
    let [n, _, h, w] = first.value().dims4("concat_channels")?;
    let mut chans = Vec::with_capacity(xs.len());
    for x in xs {
        let [xn, xc, xh, xw] = x.value().dims4("concat_channels")?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                expected: vec![n, xc, h, w],
                got: x.shape().to_vec(),
            });
        }
        chans.push(xc);
    }
    let total: usize = chans.iter().sum();
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for (x, &c) in xs.iter().zip(&chans) {
            out.extend_from_slice(&x.value().data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    let value = Tensor::new([n, total, h, w], out)?;
    Ok(Var::from_op(
        value,
        xs.to_vec(),
        Box::new(move |g, _, _| {
            let mut grads: Vec<Vec<f64>> = chans.iter().map(|&c| Vec::with_capacity(n * c * hw)).collect();
            let gd = g.data();
            for b in 0..n {
                let mut off = b * total * hw;
                for (dst, &c) in grads.iter_mut().zip(&chans) {
                    dst.extend_from_slice(&gd[off..off + c * hw]);
                    off += c * hw;
                }
            }
            grads
                .into_iter()
                .zip(&chans)
                .map(|(d, &c)| Some(Tensor::new([n, c, h, w], d).expect("shape")))
                .collect()
        }),
    ))
}

/// Channels `start..start + len` of an NCHW tensor.
pub fn slice_channels(x: &Var, start: usize, len: usize) -> Result<Var> {
    let [n, c, h, w] = x.value().dims4("slice_channels")?;
    if start + len > c || len == 0 {
        return Err(TensorError::Invalid(format!(
            "slice_channels: range {start}..{} outside {c} channels",
            start + len
        )));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for b in 0..n {
        let base = (b * c + start) * hw;
        out.extend_from_slice(&x.value().data()[base..base + len * hw]);
    }
    let value = Tensor::new([n, len, h, w], out)?;
    Ok(Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gx = vec![0.0; n * c * hw];
            for b in 0..n {
                let base = (b * c + start) * hw;
                gx[base..base + len * hw].copy_from_slice(&g.data()[b * len * hw..(b + 1) * len * hw]);
            }
            vec![Some(Tensor::new([n, c, h, w], gx).expect("shape"))]
        }),
    ))
}

/// Mean over the spatial axes: (N,C,H,W) -> (N,C,1,1).
pub fn global_avg_pool(x: &Var) -> Result<Var> {
    let [n, c, h, w] = x.value().dims4("global_avg_pool")?;
    let hw = h * w;
    let data = x
        .value()
        .data()
        .chunks(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    let value = Tensor::new([n, c, 1, 1], data)?;
    Ok(Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gx = Vec::with_capacity(n * c * hw);
            for &gv in g.data() {
                gx.extend(std::iter::repeat_n(gv / hw as f64, hw));
            }
            vec![Some(Tensor::new([n, c, h, w], gx).expect("shape"))]
        }),
    ))
}
