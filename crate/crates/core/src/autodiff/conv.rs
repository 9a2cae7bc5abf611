//! Convolution kernels: im2col plus GEMM over the whole batch.

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dSpec {
    /// 3x3 kernel, pad 1.
    pub fn k3(stride: usize) -> Self {
        Self { k: 3, stride, pad: 1 }
    }
}

pub fn conv_out_size(input: usize, spec: Conv2dSpec) -> Option<usize> {
    let span = input + 2 * spec.pad;
    if span < spec.k || spec.stride == 0 {
        None
    } else {
        Some((span - spec.k) / spec.stride + 1)
    }
}

/// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`, either
/// optionally transposed in storage.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized m*k, k*n and m*n by every caller, and the
    // strides above address exactly those extents.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `(c*k*k) x (n*ho*wo)` patch matrix.
fn im2col(x: &Tensor, spec: Conv2dSpec, ho: usize, wo: usize) -> Vec<f64> {
    let [n, c, h, w] = x.shape();
    let k = spec.k;
    let cols_n = n * ho * wo;
    let mut cols = vec![0.0; c * k * k * cols_n];
    let xd = x.data();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let out = &mut cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..n {
                    let base = (b * c + ci) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = base + iy as usize * w;
                        let dst = (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                out[dst + ox] = xd[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back onto a `shape` tensor.
fn col2im(cols: &[f64], shape: [usize; 4], spec: Conv2dSpec, ho: usize, wo: usize) -> Tensor {
    let [n, c, h, w] = shape;
    let k = spec.k;
    let cols_n = n * ho * wo;
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..n {
                    let base = (b * c + ci) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = base + iy as usize * w;
                        let src = (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                od[dst + ix as usize] += src_row[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// NCHW tensor to a channel-major `c x (n*h*w)` matrix.
fn to_channel_major(t: &Tensor) -> Vec<f64> {
    let [n, c, h, w] = t.shape();
    let hw = h * w;
    let mut out = vec![0.0; t.len()];
    for b in 0..n {
        for ci in 0..c {
            let src = &t.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
            out[ci * n * hw + b * hw..ci * n * hw + (b + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

fn from_channel_major(m: &[f64], shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for b in 0..n {
        for ci in 0..c {
            od[(b * c + ci) * hw..(b * c + ci + 1) * hw]
                .copy_from_slice(&m[ci * n * hw + b * hw..ci * n * hw + (b + 1) * hw]);
        }
    }
    out
}

fn add_bias(y: &mut Tensor, bias: &Tensor) {
    let [n, c, h, w] = y.shape();
    let hw = h * w;
    let bd = bias.data();
    for b in 0..n {
        for ci in 0..c {
            y.data_mut()[(b * c + ci) * hw..(b * c + ci + 1) * hw].iter_mut().for_each(|v| *v += bd[ci]);
        }
    }
}

/// Per-channel sums of `dy`.
pub(crate) fn bias_grad(dy: &Tensor) -> Vec<f64> {
    let [n, c, h, w] = dy.shape();
    let hw = h * w;
    let mut g = vec![0.0; c];
    for b in 0..n {
        for (ci, gc) in g.iter_mut().enumerate() {
            *gc += dy.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw].iter().sum::<f64>();
        }
    }
    g
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != channels {
            return Err(Error::shape(format!("bias has {} entries, expected {channels}", b.len())));
        }
    }
    Ok(())
}

/// Cross-correlation. `w` is `[co, ci, k, k]`.
pub(crate) fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Result<Tensor> {
    let [n, ci, h, wd] = x.shape();
    let [co, wci, kh, kw] = w.shape();
    if wci != ci || kh != spec.k || kw != spec.k {
        return Err(Error::shape(format!("conv2d: input {:?} incompatible with kernel {:?}", x.shape(), w.shape())));
    }
    check_bias(bias, co)?;
    let (ho, wo) = match (conv_out_size(h, spec), conv_out_size(wd, spec)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::shape("conv2d: input smaller than kernel")),
    };
    let cols = im2col(x, spec, ho, wo);
    let kk = ci * spec.k * spec.k;
    let cols_n = n * ho * wo;
    let mut ym = vec![0.0; co * cols_n];
    gemm(co, kk, cols_n, w.data(), false, &cols, false, 0.0, &mut ym);
    let mut y = from_channel_major(&ym, [n, co, ho, wo]);
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    Ok(y)
}

/// Gradients `(dx, dw)` of [`conv2d`].
pub(crate) fn conv2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor, spec: Conv2dSpec) -> (Tensor, Tensor) {
    let [n, ci, _, _] = x.shape();
    let [co, _, _, _] = w.shape();
    let [_, _, ho, wo] = dy.shape();
    let cols = im2col(x, spec, ho, wo);
    let dym = to_channel_major(dy);
    let kk = ci * spec.k * spec.k;
    let cols_n = n * ho * wo;
    let mut dw = Tensor::zeros(w.shape());
    gemm(co, cols_n, kk, &dym, false, &cols, true, 0.0, dw.data_mut());
    let mut dcols = vec![0.0; kk * cols_n];
    gemm(kk, co, cols_n, w.data(), true, &dym, false, 0.0, &mut dcols);
    (col2im(&dcols, x.shape(), spec, ho, wo), dw)
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same kernel
/// viewed as `[ci, co, k, k]`. `out_hw` picks the output size among those
/// that the forward convolution maps onto the input size.
pub(crate) fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spec: Conv2dSpec,
    out_hw: (usize, usize),
) -> Result<Tensor> {
    let [n, ci, h, wd] = x.shape();
    let [wci, co, kh, kw] = w.shape();
    if wci != ci || kh != spec.k || kw != spec.k {
        return Err(Error::shape(format!(
            "conv_transpose2d: input {:?} incompatible with kernel {:?}",
            x.shape(),
            w.shape()
        )));
    }
    check_bias(bias, co)?;
    if conv_out_size(out_hw.0, spec) != Some(h) || conv_out_size(out_hw.1, spec) != Some(wd) {
        return Err(Error::shape(format!("conv_transpose2d: output {out_hw:?} does not invert input {:?}", (h, wd))));
    }
    let xm = to_channel_major(x);
    let kk = co * spec.k * spec.k;
    let cols_n = n * h * wd;
    let mut cols = vec![0.0; kk * cols_n];
    gemm(kk, ci, cols_n, w.data(), true, &xm, false, 0.0, &mut cols);
    let mut y = col2im(&cols, [n, co, out_hw.0, out_hw.1], spec, h, wd);
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    Ok(y)
}

/// Gradients `(dx, dw)` of [`conv_transpose2d`].
pub(crate) fn conv_transpose2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor, spec: Conv2dSpec) -> (Tensor, Tensor) {
    let [n, ci, h, wd] = x.shape();
    let [_, co, _, _] = w.shape();
    let cols = im2col(dy, spec, h, wd);
    let kk = co * spec.k * spec.k;
    let cols_n = n * h * wd;
    let mut dxm = vec![0.0; ci * cols_n];
    gemm(ci, kk, cols_n, w.data(), false, &cols, false, 0.0, &mut dxm);
    let xm = to_channel_major(x);
    let mut dw = Tensor::zeros(w.shape());
    gemm(ci, cols_n, kk, &xm, false, &cols, true, 0.0, dw.data_mut());
    (from_channel_major(&dxm, x.shape()), dw)
}
