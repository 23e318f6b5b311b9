use crate::autograd::Var;
use crate::error::Result;
use crate::param::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Per-channel batch normalization of an NCHW tensor.
///
/// In training mode the batch statistics (biased variance) normalize the
/// input and the running estimates are updated with the unbiased variance.
/// Otherwise the running estimates are used and left untouched.
pub fn batch_norm(
    x: &Var,
    gamma: &Var,
    beta: &Var,
    running_mean: &Param,
    running_var: &Param,
    training: bool,
    cfg: BatchNormConfig,
) -> Result<Var> {
    let [n, c, h, w] = x.value().dims4("batch_norm")?;
    gamma.value().ensure_shape("batch_norm gamma", &[c])?;
    beta.value().ensure_shape("batch_norm beta", &[c])?;
    running_mean.value().ensure_shape("batch_norm running_mean", &[c])?;
    running_var.value().ensure_shape("batch_norm running_var", &[c])?;
    let hw = h * w;
    let m = n * hw;
    let xd = x.value().data();

    let (mean, var) = if training {
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, plane) in xd.chunks(hw).enumerate() {
            mean[i % c] += plane.iter().sum::<f64>();
        }
        for v in &mut mean {
            *v /= m as f64;
        }
        for (i, plane) in xd.chunks(hw).enumerate() {
            let mu = mean[i % c];
            var[i % c] += plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        for v in &mut var {
            *v /= m as f64;
        }
        let unbias = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
        let k = cfg.momentum;
        running_mean.update(|t| {
            for (r, &mu) in t.data_mut().iter_mut().zip(&mean) {
                *r = (1.0 - k) * *r + k * mu;
            }
        });
        running_var.update(|t| {
            for (r, &v) in t.data_mut().iter_mut().zip(&var) {
                *r = (1.0 - k) * *r + k * v * unbias;
            }
        });
        (mean, var)
    } else {
        (
            running_mean.value().data().to_vec(),
            running_var.value().data().to_vec(),
        )
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();

    let gd = gamma.value().data();
    let bd = beta.value().data();
    let mut out = vec![0.0; xd.len()];
    for (i, (o, src)) in out.chunks_mut(hw).zip(xd.chunks(hw)).enumerate() {
        let ch = i % c;
        let scale = gd[ch] * inv_std[ch];
        let shift = bd[ch] - mean[ch] * scale;
        for (o, &v) in o.iter_mut().zip(src) {
            *o = v * scale + shift;
        }
    }
    let value = Tensor::new([n, c, h, w], out)?;

    Ok(Var::from_op(
        value,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _, inputs| {
            let (xv, gv) = (inputs[0], inputs[1]);
            let gd = g.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for (i, (gp, xp)) in gd.chunks(hw).zip(xv.data().chunks(hw)).enumerate() {
                let ch = i % c;
                let mu = mean[ch];
                let is = inv_std[ch];
                for (&gg, &xx) in gp.iter().zip(xp) {
                    sum_g[ch] += gg;
                    sum_gx[ch] += gg * (xx - mu) * is;
                }
            }
            let mut gx = vec![0.0; gd.len()];
            for (i, ((dst, gp), xp)) in gx
                .chunks_mut(hw)
                .zip(gd.chunks(hw))
                .zip(xv.data().chunks(hw))
                .enumerate()
            {
                let ch = i % c;
                let k = gv.data()[ch] * inv_std[ch];
                if training {
                    let mf = m as f64;
                    let mg = sum_g[ch] / mf;
                    let mgx = sum_gx[ch] / mf;
                    for ((d, &gg), &xx) in dst.iter_mut().zip(gp).zip(xp) {
                        let xhat = (xx - mean[ch]) * inv_std[ch];
                        *d = k * (gg - mg - xhat * mgx);
                    }
                } else {
                    for (d, &gg) in dst.iter_mut().zip(gp) {
                        *d = k * gg;
                    }
                }
            }
            vec![
                Some(Tensor::new([n, c, h, w], gx).expect("shape")),
                Some(Tensor::new([c], sum_gx).expect("shape")),
                Some(Tensor::new([c], sum_g).expect("shape")),
            ]
        }),
    ))
}
