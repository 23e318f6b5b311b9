use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// One output coordinate of a 1-D linear resampling: blend of `lo` and `hi`
/// with weight `1 - frac` and `frac`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearTap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-centre taps (corners not aligned), mapping `input` samples to
/// `output` samples.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<BilinearTap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            BilinearTap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

fn resize_planes(src: &[f64], planes: usize, h: usize, w: usize, ty: &[BilinearTap], tx: &[BilinearTap]) -> Vec<f64> {
    let (ho, wo) = (ty.len(), tx.len());
    let mut out = vec![0.0; planes * ho * wo];
    let mut row = vec![0.0; wo];
    for (p, dst) in out.chunks_mut(ho * wo).enumerate() {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for (oy, t) in ty.iter().enumerate() {
            let r0 = &plane[t.lo * w..(t.lo + 1) * w];
            let r1 = &plane[t.hi * w..(t.hi + 1) * w];
            for (v, s) in row.iter_mut().zip(tx) {
                let a = r0[s.lo] + (r0[s.hi] - r0[s.lo]) * s.frac;
                let b = r1[s.lo] + (r1[s.hi] - r1[s.lo]) * s.frac;
                *v = a + (b - a) * t.frac;
            }
            dst[oy * wo..(oy + 1) * wo].copy_from_slice(&row);
        }
    }
    out
}

fn resize_planes_backward(g: &[f64], planes: usize, h: usize, w: usize, ty: &[BilinearTap], tx: &[BilinearTap]) -> Vec<f64> {
    let (ho, wo) = (ty.len(), tx.len());
    let mut out = vec![0.0; planes * h * w];
    for (p, dst) in out.chunks_mut(h * w).enumerate() {
        let gp = &g[p * ho * wo..(p + 1) * ho * wo];
        for (oy, t) in ty.iter().enumerate() {
            let grow = &gp[oy * wo..(oy + 1) * wo];
            for (&gv, s) in grow.iter().zip(tx) {
                let w00 = (1.0 - t.frac) * (1.0 - s.frac);
                let w01 = (1.0 - t.frac) * s.frac;
                let w10 = t.frac * (1.0 - s.frac);
                let w11 = t.frac * s.frac;
                dst[t.lo * w + s.lo] += gv * w00;
                dst[t.lo * w + s.hi] += gv * w01;
                dst[t.hi * w + s.lo] += gv * w10;
                dst[t.hi * w + s.hi] += gv * w11;
            }
        }
    }
    out
}

/// Resizes the raw NCHW (or any `[.., H, W]`) data without building a graph.
pub fn resize_bilinear_tensor(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() < 2 || out_h == 0 || out_w == 0 || x.numel() == 0 {
        return Err(TensorError::Invalid(format!(
            "resize_bilinear: cannot resize {shape:?} to {out_h}x{out_w}"
        )));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = x.numel() / (h * w);
    let data = resize_planes(x.data(), planes, h, w, &bilinear_taps(h, out_h), &bilinear_taps(w, out_w));
    let mut out_shape = shape.to_vec();
    let len = out_shape.len();
    out_shape[len - 2] = out_h;
    out_shape[len - 1] = out_w;
    Tensor::new(out_shape, data)
}

pub fn resize_bilinear(x: &Var, out_h: usize, out_w: usize) -> Result<Var> {
    let [n, c, h, w] = x.value().dims4("resize_bilinear")?;
    let value = resize_bilinear_tensor(x.value(), out_h, out_w)?;
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    Ok(Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let data = resize_planes_backward(g.data(), n * c, h, w, &ty, &tx);
            vec![Some(Tensor::new([n, c, h, w], data).expect("shape"))]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_by_two_averages_pairs() {
        let taps = bilinear_taps(4, 2);
        assert_eq!(taps[0], BilinearTap { lo: 0, hi: 1, frac: 0.5 });
        assert_eq!(taps[1], BilinearTap { lo: 2, hi: 3, frac: 0.5 });
    }

    #[test]
    fn upsample_by_two_clamps_at_border() {
        let x = Tensor::new([1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
        let y = resize_bilinear_tensor(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn identity_size_is_noop() {
        let x = Tensor::from_fn([1, 2, 3, 5], |i| i as f64 * 0.37);
        let y = resize_bilinear_tensor(&x, 3, 5).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-15);
    }
}
