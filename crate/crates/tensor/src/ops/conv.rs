use crate::autograd::Var;
use crate::counter;
use crate::error::{Result, TensorError};
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

/// Padding and dilation of a stride-1 convolution, as (vertical, horizontal).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub pad: (usize, usize),
    pub dilation: (usize, usize),
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Self {
            pad: (0, 0),
            dilation: (1, 1),
        }
    }
}

impl Conv2dGeometry {
    /// Zero padding that preserves spatial size for a `kh x kw` kernel.
    pub fn same(kh: usize, kw: usize, dilation: (usize, usize)) -> Self {
        Self {
            pad: (dilation.0 * (kh - 1) / 2, dilation.1 * (kw - 1) / 2),
            dilation,
        }
    }
}

pub fn conv_output_size(input: usize, kernel: usize, pad: usize, dilation: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(dilation * (kernel - 1))
}

// Upper bound on im2col scratch, in elements.
const COL_BUDGET: usize = 1 << 21;

struct Dims {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: Conv2dGeometry,
}

impl Dims {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.pad == (0, 0)
    }

    fn rows_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.k() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// Fills `col` (K x rows*wo) for output rows `y0..y0+rows` of one image.
    fn im2col(&self, x: &[f64], y0: usize, rows: usize, col: &mut [f64]) {
        let (ph, pw) = self.geom.pad;
        let (dh, dw) = self.geom.dilation;
        let p = rows * self.wo;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let k = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[k * p..(k + 1) * p];
                    for r in 0..rows {
                        let row = &mut dst[r * self.wo..(r + 1) * self.wo];
                        let iy = (y0 + r + ky * dh) as isize - ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let off = (kx * dw) as isize - pw as isize;
                        for (ox, v) in row.iter_mut().enumerate() {
                            let ix = ox as isize + off;
                            *v = if ix >= 0 && ix < self.w as isize {
                                src[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `col` back onto the input gradient of one image.
    fn col2im(&self, col: &[f64], y0: usize, rows: usize, dx: &mut [f64]) {
        let (ph, pw) = self.geom.pad;
        let (dh, dw) = self.geom.dilation;
        let p = rows * self.wo;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let k = (ci * self.kh + ky) * self.kw + kx;
                    let src = &col[k * p..(k + 1) * p];
                    for r in 0..rows {
                        let iy = (y0 + r + ky * dh) as isize - ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let off = (kx * dw) as isize - pw as isize;
                        for (ox, &v) in src[r * self.wo..(r + 1) * self.wo].iter().enumerate() {
                            let ix = ox as isize + off;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 2-D convolution (cross-correlation) of `x` (N,Cin,H,W) with
/// `weight` (Cout,Cin,kh,kw) and optional `bias` (Cout).
pub fn conv2d(x: &Var, weight: &Var, bias: Option<&Var>, geom: Conv2dGeometry) -> Result<Var> {
    let [n, cin, h, w] = x.value().dims4("conv2d")?;
    let [cout, wcin, kh, kw] = weight.value().dims4("conv2d weight")?;
    if wcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: vec![n, wcin, h, w],
            got: x.shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        b.value().ensure_shape("conv2d bias", &[cout])?;
    }
    if geom.dilation.0 == 0 || geom.dilation.1 == 0 {
        return Err(TensorError::Invalid("conv2d: dilation must be >= 1".into()));
    }
    let (Some(ho), Some(wo)) = (
        conv_output_size(h, kh, geom.pad.0, geom.dilation.0),
        conv_output_size(w, kw, geom.pad.1, geom.dilation.1),
    ) else {
        return Err(TensorError::Invalid(format!(
            "conv2d: {kh}x{kw} kernel does not fit a {h}x{w} input"
        )));
    };
    if ho == 0 || wo == 0 {
        return Err(TensorError::Invalid(format!(
            "conv2d: {kh}x{kw} kernel does not fit a {h}x{w} input"
        )));
    }
    let d = Dims {
        cin,
        h,
        w,
        kh,
        kw,
        ho,
        wo,
        geom,
    };
    counter::add_conv_macs((n * cout * ho * wo * d.k()) as u64);

    let k = d.k();
    let wmat = MatRef::row_major(weight.value().data(), cout, k);
    let mut out = vec![0.0; n * cout * ho * wo];
    let in_stride = cin * h * w;
    let out_stride = cout * ho * wo;
    let mut col = Vec::new();
    for b in 0..n {
        let xb = &x.value().data()[b * in_stride..(b + 1) * in_stride];
        let ob = &mut out[b * out_stride..(b + 1) * out_stride];
        if d.is_pointwise() {
            gemm(1.0, wmat, MatRef::row_major(xb, cin, h * w), 0.0, ob, h * w);
            continue;
        }
        let step = d.rows_per_chunk();
        let mut y0 = 0;
        while y0 < ho {
            let rows = step.min(ho - y0);
            let p = rows * wo;
            col.resize(k * p, 0.0);
            d.im2col(xb, y0, rows, &mut col);
            gemm(
                1.0,
                wmat,
                MatRef::row_major(&col, k, p),
                0.0,
                &mut ob[y0 * wo..],
                ho * wo,
            );
            y0 += rows;
        }
    }
    if let Some(bv) = bias {
        let hw = ho * wo;
        for (i, plane) in out.chunks_mut(hw).enumerate() {
            let bias = bv.value().data()[i % cout];
            for v in plane {
                *v += bias;
            }
        }
    }
    let value = Tensor::new([n, cout, ho, wo], out)?;

    let need_x = x.requires_grad();
    let need_w = weight.requires_grad();
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Var::from_op(
        value,
        parents,
        Box::new(move |g, _, inputs| {
            let (xv, wv) = (inputs[0], inputs[1]);
            let gd = g.data();
            let wmat = MatRef::row_major(wv.data(), cout, k);
            let mut gx = need_x.then(|| vec![0.0; n * in_stride]);
            let mut gw = need_w.then(|| vec![0.0; cout * k]);
            let mut col = Vec::new();
            let mut dcol = Vec::new();
            for b in 0..n {
                let xb = &xv.data()[b * in_stride..(b + 1) * in_stride];
                let gb = &gd[b * out_stride..(b + 1) * out_stride];
                if d.is_pointwise() {
                    let gmat = MatRef::row_major(gb, cout, h * w);
                    if let Some(gw) = gw.as_mut() {
                        gemm(1.0, gmat, MatRef::row_major(xb, cin, h * w).t(), 1.0, gw, k);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[b * in_stride..(b + 1) * in_stride];
                        gemm(1.0, wmat.t(), gmat, 0.0, dst, h * w);
                    }
                    continue;
                }
                let step = d.rows_per_chunk();
                let mut y0 = 0;
                while y0 < ho {
                    let rows = step.min(ho - y0);
                    let p = rows * wo;
                    let gchunk = MatRef {
                        data: &gb[y0 * wo..],
                        rows: cout,
                        cols: p,
                        rs: (ho * wo) as isize,
                        cs: 1,
                    };
                    if let Some(gw) = gw.as_mut() {
                        col.resize(k * p, 0.0);
                        d.im2col(xb, y0, rows, &mut col);
                        gemm(1.0, gchunk, MatRef::row_major(&col, k, p).t(), 1.0, gw, k);
                    }
                    if let Some(gx) = gx.as_mut() {
                        dcol.resize(k * p, 0.0);
                        gemm(1.0, wmat.t(), gchunk, 0.0, &mut dcol, p);
                        d.col2im(&dcol, y0, rows, &mut gx[b * in_stride..(b + 1) * in_stride]);
                    }
                    y0 += rows;
                }
            }
            let mut grads = vec![
                gx.map(|v| Tensor::new([n, cin, h, w], v).expect("shape")),
                gw.map(|v| Tensor::new([cout, cin, kh, kw], v).expect("shape")),
            ];
            if inputs.len() == 3 {
                let hw = ho * wo;
                let mut gb = vec![0.0; cout];
                for (i, plane) in gd.chunks(hw).enumerate() {
                    gb[i % cout] += plane.iter().sum::<f64>();
                }
                grads.push(Some(Tensor::new([cout], gb).expect("shape")));
            }
            grads
        }),
    ))
}
