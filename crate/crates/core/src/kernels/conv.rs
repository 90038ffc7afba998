//! 2D convolution (NCHW), its bias-free adjoint, and their gradients.
//!
//! Padding is never materialized: every loop clips its output range to the
//! positions whose receptive-field tap lands inside the unpadded input.

use crate::error::{invalid_arg, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[out_channels, in_channels, kernel_h, kernel_w]`
    pub weights: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [o, _, kh, kw] = weights.dims4()?;
        if kh == 0 || kw == 0 {
            return Err(invalid_arg!("kernel extents must be >= 1"));
        }
        if stride == 0 {
            return Err(invalid_arg!("stride must be >= 1"));
        }
        if bias.shape() != [o] {
            return Err(shape_err!("bias shape {:?} does not match {} output channels", bias.shape(), o));
        }
        Ok(ConvParams { weights, bias, stride, padding })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    /// Output spatial extent for an input of `h x w`, if the kernel fits.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        Some((
            conv_output_len(h, kh, self.stride, self.padding)?,
            conv_output_len(w, kw, self.stride, self.padding)?,
        ))
    }
}

/// `floor((len + 2 pad - k) / stride) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output indices `o` in `[lo, hi)` with `0 <= o*stride + tap - pad < in_len`.
#[inline]
fn tap_range(out_len: usize, in_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > tap { ((in_len + pad - tap - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(p: &ConvParams, n: usize, h: usize, w: usize) -> Result<Self> {
        let (kh, kw) = p.kernel();
        let (oh, ow) = p.output_hw(h, w).ok_or_else(|| {
            shape_err!("{kh}x{kw} kernel with padding {} does not fit a {h}x{w} input", p.padding)
        })?;
        Ok(Geometry {
            n,
            cin: p.in_channels(),
            cout: p.out_channels(),
            h,
            w,
            oh,
            ow,
            kh,
            kw,
            stride: p.stride,
            pad: p.padding,
        })
    }

    /// Calls `f(input_offset, output_offset)` for every (input, output) pixel
    /// pair coupled by tap `(ki, kj)` within one channel plane.
    #[inline]
    fn for_each_tap(&self, ki: usize, kj: usize, mut f: impl FnMut(usize, usize)) {
        let (r0, r1) = tap_range(self.oh, self.h, ki, self.stride, self.pad);
        let (c0, c1) = tap_range(self.ow, self.w, kj, self.stride, self.pad);
        for r in r0..r1 {
            let ir = r * self.stride + ki - self.pad;
            let in_row = ir * self.w;
            let out_row = r * self.ow;
            for c in c0..c1 {
                let ic = c * self.stride + kj - self.pad;
                f(in_row + ic, out_row + c);
            }
        }
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn weight_index(&self, co: usize, ci: usize, ki: usize, kj: usize) -> usize {
        ((co * self.cin + ci) * self.kh + ki) * self.kw + kj
    }
}

fn check_input(x: &Tensor, p: &ConvParams) -> Result<[usize; 4]> {
    let dims = x.dims4()?;
    if dims[1] != p.in_channels() {
        return Err(shape_err!(
            "input has {} channels but the kernel expects {}",
            dims[1],
            p.in_channels()
        ));
    }
    Ok(dims)
}

fn correlate(x: &Tensor, p: &ConvParams, with_bias: bool) -> Result<Tensor> {
    let [n, _, h, w] = check_input(x, p)?;
    let g = Geometry::new(p, n, h, w)?;
    let mut out = Tensor::zeros(&[n, g.cout, g.oh, g.ow]);
    let xs = x.data();
    let ws = p.weights.data();
    let out_data = out.data_mut();
    for b in 0..n {
        for co in 0..g.cout {
            let o_base = (b * g.cout + co) * g.out_plane();
            let plane = &mut out_data[o_base..o_base + g.out_plane()];
            if with_bias {
                plane.fill(p.bias.data()[co]);
            }
            for ci in 0..g.cin {
                let i_base = (b * g.cin + ci) * g.in_plane();
                let input = &xs[i_base..i_base + g.in_plane()];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = ws[g.weight_index(co, ci, ki, kj)];
                        g.for_each_tap(ki, kj, |i, o| plane[o] += wv * input[i]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Cross-correlation with zero padding, plus a per-output-channel bias.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    correlate(x, p, true)
}

/// `conv2d` without the bias: the linear part whose adjoint is [`conv2d_transpose`].
pub fn conv2d_nobias(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    correlate(x, p, false)
}

/// Exact adjoint of [`conv2d_nobias`]. `input_hw` is the spatial extent of the
/// forward input; it disambiguates stride remainders.
pub fn conv2d_transpose(u: &Tensor, p: &ConvParams, input_hw: (usize, usize)) -> Result<Tensor> {
    let [n, cu, uh, uw] = u.dims4()?;
    if cu != p.out_channels() {
        return Err(shape_err!(
            "transpose input has {} channels but the kernel has {} outputs",
            cu,
            p.out_channels()
        ));
    }
    let (h, w) = input_hw;
    let g = Geometry::new(p, n, h, w)?;
    if (g.oh, g.ow) != (uh, uw) {
        return Err(shape_err!(
            "a {h}x{w} input convolves to {}x{}, which does not match the {uh}x{uw} transpose input",
            g.oh,
            g.ow
        ));
    }
    let mut out = Tensor::zeros(&[n, g.cin, h, w]);
    let us = u.data();
    let ws = p.weights.data();
    let out_data = out.data_mut();
    for b in 0..n {
        for ci in 0..g.cin {
            let o_base = (b * g.cin + ci) * g.in_plane();
            let plane = &mut out_data[o_base..o_base + g.in_plane()];
            for co in 0..g.cout {
                let u_base = (b * g.cout + co) * g.out_plane();
                let up = &us[u_base..u_base + g.out_plane()];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = ws[g.weight_index(co, ci, ki, kj)];
                        g.for_each_tap(ki, kj, |i, o| plane[i] += wv * up[o]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `dL/dW[co, ci, ki, kj] = sum_{b, o} upstream[b, co, o] * input[b, ci, o*s + k - p]`.
fn weight_grad(input: &Tensor, upstream: &Tensor, g: &Geometry) -> Tensor {
    let mut grad = Tensor::zeros(&[g.cout, g.cin, g.kh, g.kw]);
    let xs = input.data();
    let us = upstream.data();
    let gd = grad.data_mut();
    for b in 0..g.n {
        for co in 0..g.cout {
            let u_base = (b * g.cout + co) * g.out_plane();
            let up = &us[u_base..u_base + g.out_plane()];
            for ci in 0..g.cin {
                let i_base = (b * g.cin + ci) * g.in_plane();
                let inp = &xs[i_base..i_base + g.in_plane()];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let mut acc = 0.0;
                        g.for_each_tap(ki, kj, |i, o| acc += up[o] * inp[i]);
                        gd[g.weight_index(co, ci, ki, kj)] += acc;
                    }
                }
            }
        }
    }
    grad
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Gradients of `conv2d(x, p)` given `dL/d(output)`.
pub fn conv2d_backward(x: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let [n, _, h, w] = check_input(x, p)?;
    let g = Geometry::new(p, n, h, w)?;
    if grad_out.shape() != [n, g.cout, g.oh, g.ow] {
        return Err(shape_err!(
            "upstream gradient {:?} does not match conv output [{n}, {}, {}, {}]",
            grad_out.shape(),
            g.cout,
            g.oh,
            g.ow
        ));
    }
    let input = conv2d_transpose(grad_out, p, (h, w))?;
    let weights = weight_grad(x, grad_out, &g);
    let mut bias = Tensor::zeros(&[g.cout]);
    for b in 0..n {
        for co in 0..g.cout {
            let base = (b * g.cout + co) * g.out_plane();
            bias.data_mut()[co] += grad_out.data()[base..base + g.out_plane()].iter().sum::<f64>();
        }
    }
    Ok(ConvGrads { input, weights, bias })
}

/// Gradients of `conv2d_transpose(u, p, ..)` with respect to `u` and the weights,
/// given `dL/d(output)` (which has the forward-input shape).
pub fn conv2d_transpose_backward(u: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let [n, _, h, w] = check_input(grad_out, p)?;
    let g = Geometry::new(p, n, h, w)?;
    if u.shape() != [n, g.cout, g.oh, g.ow] {
        return Err(shape_err!(
            "transpose input {:?} does not match [{n}, {}, {}, {}]",
            u.shape(),
            g.cout,
            g.oh,
            g.ow
        ));
    }
    let grad_u = conv2d_nobias(grad_out, p)?;
    let grad_w = weight_grad(grad_out, u, &g);
    Ok((grad_u, grad_w))
}
