//! 2-D cross-correlation and its dilated 1-D special case, sharing one
//! kernel loop.

use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Conv2dOpts { stride: 1, padding: 0, dilation: 1 }
    }
}

impl Conv2dOpts {
    /// Stride 1 with padding that keeps the spatial size for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Conv2dOpts { stride: 1, padding: dilation * (kernel - 1) / 2, dilation }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    sy: usize,
    sx: usize,
    dy: usize,
    dx: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

pub(crate) struct ConvCtx {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: Geom,
}

impl ConvCtx {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.input, self.kernel];
        v.extend(self.bias);
        v
    }
}

/// Output positions `o` in `0..n_out` whose input index `o*stride + offset`
/// lands inside `0..n_in`.
fn valid_range(n_out: usize, n_in: usize, offset: isize, stride: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let room = n_in as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let hi = (hi as usize).min(n_out);
    let lo = (lo as usize).min(hi);
    (lo, hi)
}

/// Visits every (output, input, weight) triple of the convolution. The
/// closure receives flat indices into output, input and kernel buffers.
#[inline(always)]
fn for_each_tap(geom: &Geom, mut f: impl FnMut(usize, usize, usize, usize)) {
    let g = geom;
    for oc in 0..g.c_out {
        for ic in 0..g.c_in {
            for ky in 0..g.kh {
                let off_y = (ky * g.dy) as isize - g.pad_top as isize;
                let (y_lo, y_hi) = valid_range(g.oh, g.h, off_y, g.sy);
                for kx in 0..g.kw {
                    let off_x = (kx * g.dx) as isize - g.pad_left as isize;
                    let (x_lo, x_hi) = valid_range(g.ow, g.w, off_x, g.sx);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let k_idx = ((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx;
                    for oy in y_lo..y_hi {
                        let iy = (oy * g.sy) as isize + off_y;
                        let out_base = (oc * g.oh + oy) * g.ow;
                        let in_base = (ic * g.h + iy as usize) * g.w;
                        let ix0 = (x_lo * g.sx) as isize + off_x;
                        f(out_base + x_lo, in_base + ix0 as usize, x_hi - x_lo, k_idx);
                    }
                }
            }
        }
    }
}

fn conv_forward(geom: &Geom, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let plane = geom.oh * geom.ow;
    let mut out = vec![0.0; geom.c_out * plane];
    if let Some(b) = bias {
        for (oc, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b[oc]);
        }
    }
    let sx = geom.sx;
    for_each_tap(geom, |o0, i0, n, k| {
        let w = kernel[k];
        if w == 0.0 {
            return;
        }
        let dst = &mut out[o0..o0 + n];
        if sx == 1 {
            for (o, x) in dst.iter_mut().zip(&input[i0..i0 + n]) {
                *o += w * x;
            }
        } else {
            for (j, o) in dst.iter_mut().enumerate() {
                *o += w * input[i0 + j * sx];
            }
        }
    });
    out
}

impl Graph {
    fn conv_check_bias(&self, op: &'static str, bias: Option<Var>, c_out: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(TensorError::dim(op, format!("bias shape {:?}, expected [{}]", self.shape(b), c_out)));
            }
        }
        Ok(())
    }

    fn conv_push(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: Geom, shape: Vec<usize>) -> Result<Var> {
        let data = conv_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Conv(ConvCtx { input, kernel, bias, geom })))
    }

    /// Cross-correlation of `input[C_in,H,W]` with `kernel[C_out,C_in,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, opts: Conv2dOpts) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 4 {
            return Err(TensorError::dim(
                "conv2d",
                format!("expected input [C,H,W] and kernel [O,C,kh,kw], got {:?} and {:?}", si, sk),
            ));
        }
        if sk[1] != si[0] {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel expects {} input channels, input has {}", sk[1], si[0]),
            ));
        }
        if opts.stride == 0 || opts.dilation == 0 {
            return Err(TensorError::param("conv2d", "stride and dilation must be positive"));
        }
        self.conv_check_bias("conv2d", bias, sk[0])?;
        let out_len = |n: usize, k: usize| -> Option<usize> {
            let span = opts.dilation * (k - 1) + 1;
            (n + 2 * opts.padding).checked_sub(span).map(|r| r / opts.stride + 1)
        };
        let (Some(oh), Some(ow)) = (out_len(si[1], sk[2]), out_len(si[2], sk[3])) else {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel {:?} does not fit input {:?} with {:?}", sk, si, opts),
            ));
        };
        let geom = Geom {
            c_in: si[0],
            h: si[1],
            w: si[2],
            c_out: sk[0],
            kh: sk[2],
            kw: sk[3],
            sy: opts.stride,
            sx: opts.stride,
            dy: opts.dilation,
            dx: opts.dilation,
            pad_top: opts.padding,
            pad_left: opts.padding,
            oh,
            ow,
        };
        self.conv_push(input, kernel, bias, geom, vec![sk[0], oh, ow])
    }

    /// Dilated 1-D cross-correlation of `input[C_in,T]` with
    /// `kernel[C_out,C_in,k]` and explicit `(left, right)` zero padding:
    /// `Y[o,t] = sum_{c,j} W[o,c,j] X[c, t + d*j - left]`.
    ///
    /// With `left = d*(k-1)` and `right = 0` this is the causal form
    /// `Y_t = sum_j w'_j X_{t - d*j}` where `w'_j = W[.., k-1-j]`.
    pub fn conv1d_dilated(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
        padding: (usize, usize),
    ) -> Result<Var> {
        if dilation == 0 {
            return Err(TensorError::param("conv1d_dilated", "dilation must be at least 1"));
        }
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 2 || sk.len() != 3 || sk[1] != si[0] {
            return Err(TensorError::dim(
                "conv1d_dilated",
                format!("expected input [C,T] and kernel [O,C,k], got {:?} and {:?}", si, sk),
            ));
        }
        self.conv_check_bias("conv1d_dilated", bias, sk[0])?;
        let span = dilation * (sk[2] - 1) + 1;
        let Some(rem) = (si[1] + padding.0 + padding.1).checked_sub(span) else {
            return Err(TensorError::dim("conv1d_dilated", format!("kernel span {} exceeds padded length", span)));
        };
        let ow = rem + 1;
        let geom = Geom {
            c_in: si[0],
            h: 1,
            w: si[1],
            c_out: sk[0],
            kh: 1,
            kw: sk[2],
            sy: 1,
            sx: 1,
            dy: 1,
            dx: dilation,
            pad_top: 0,
            pad_left: padding.0,
            oh: 1,
            ow,
        };
        self.conv_push(input, kernel, bias, geom, vec![sk[0], ow])
    }
}

pub(super) fn conv_backward(g_: &Graph, ctx: &ConvCtx, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let geom = &ctx.geom;
    let input = g_.value(ctx.input).data();
    let kernel = g_.value(ctx.kernel).data();
    let gd = g.data();
    let sx = geom.sx;
    let want_in = g_.requires_grad(ctx.input);
    let want_k = g_.requires_grad(ctx.kernel);
    let mut d_in = if want_in { vec![0.0; input.len()] } else { Vec::new() };
    let mut d_k = if want_k { vec![0.0; kernel.len()] } else { Vec::new() };
    for_each_tap(geom, |o0, i0, n, k| {
        let go = &gd[o0..o0 + n];
        if want_in {
            let w = kernel[k];
            if w != 0.0 {
                for (j, gv) in go.iter().enumerate() {
                    d_in[i0 + j * sx] += w * gv;
                }
            }
        }
        if want_k {
            let mut acc = 0.0;
            for (j, gv) in go.iter().enumerate() {
                acc += gv * input[i0 + j * sx];
            }
            d_k[k] += acc;
        }
    });
    if want_in {
        let shape = g_.shape(ctx.input).to_vec();
        g_.accumulate(pending, ctx.input, Tensor::new(shape, d_in).unwrap());
    }
    if want_k {
        let shape = g_.shape(ctx.kernel).to_vec();
        g_.accumulate(pending, ctx.kernel, Tensor::new(shape, d_k).unwrap());
    }
    if let Some(b) = ctx.bias {
        let plane = geom.oh * geom.ow;
        let db = gd.chunks(plane).map(|c| c.iter().sum()).collect();
        g_.accumulate(pending, b, Tensor::new(vec![geom.c_out], db).unwrap());
    }
}
