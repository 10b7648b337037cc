use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolScope {
    /// One value per channel; output shape `[C,1,1]`.
    Global,
    /// Unpadded sliding window of `(kh, kw)` with `(sh, sw)` strides.
    Window { kernel: (usize, usize), stride: (usize, usize) },
}

pub(crate) struct WindowCtx {
    pub(crate) x: Var,
    mode: PoolMode,
    kernel: (usize, usize),
    stride: (usize, usize),
    out_hw: (usize, usize),
    /// Flat input index chosen by each max-pool output.
    argmax: Vec<usize>,
}

/// Bilinear source taps for one output coordinate (align-corners false).
fn bilinear_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

impl Graph {
    fn expect_chw(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(TensorError::dim(op, format!("expected [C,H,W], got {:?}", s))),
        }
    }

    pub fn pool(&mut self, x: Var, mode: PoolMode, scope: PoolScope) -> Result<Var> {
        let (c, h, w) = self.expect_chw("pool", x)?;
        match scope {
            PoolScope::Global => {
                let plane = h * w;
                let src = self.value(x).data();
                match mode {
                    PoolMode::Avg => {
                        let data = src.chunks(plane).map(|ch| ch.iter().sum::<f64>() / plane as f64).collect();
                        let out = Tensor::new(vec![c, 1, 1], data)?;
                        Ok(self.push(out, Op::GlobalAvg(x)))
                    }
                    PoolMode::Max => {
                        let mut argmax = Vec::with_capacity(c);
                        let mut data = Vec::with_capacity(c);
                        for (ch, vals) in src.chunks(plane).enumerate() {
                            let mut best = 0;
                            for (i, v) in vals.iter().enumerate() {
                                if *v > vals[best] {
                                    best = i;
                                }
                            }
                            argmax.push(ch * plane + best);
                            data.push(vals[best]);
                        }
                        let out = Tensor::new(vec![c, 1, 1], data)?;
                        Ok(self.push(out, Op::GlobalMax { x, argmax }))
                    }
                }
            }
            PoolScope::Window { kernel, stride } => {
                let (kh, kw) = kernel;
                if kh == 0 || kw == 0 || stride.0 == 0 || stride.1 == 0 {
                    return Err(TensorError::param("pool", "window and stride must be positive"));
                }
                if kh > h || kw > w {
                    return Err(TensorError::dim("pool", format!("window {:?} larger than input {}x{}", kernel, h, w)));
                }
                let oh = (h - kh) / stride.0 + 1;
                let ow = (w - kw) / stride.1 + 1;
                let src = self.value(x).data();
                let mut data = vec![0.0; c * oh * ow];
                let mut argmax = Vec::new();
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let o = (ch * oh + oy) * ow + ox;
                            let mut acc = 0.0;
                            let mut best = usize::MAX;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let i = (ch * h + oy * stride.0 + ky) * w + ox * stride.1 + kx;
                                    acc += src[i];
                                    if best == usize::MAX || src[i] > src[best] {
                                        best = i;
                                    }
                                }
                            }
                            match mode {
                                PoolMode::Avg => data[o] = acc / (kh * kw) as f64,
                                PoolMode::Max => {
                                    data[o] = src[best];
                                    argmax.push(best);
                                }
                            }
                        }
                    }
                }
                let out = Tensor::new(vec![c, oh, ow], data)?;
                Ok(self.push(out, Op::WindowPool(WindowCtx { x, mode, kernel, stride, out_hw: (oh, ow), argmax })))
            }
        }
    }

    /// Bilinear resize of `[C,h,w]` to `[C,H,W]` with half-pixel centres;
    /// a 1x1 input becomes a constant plane.
    pub fn bilinear_upsample(&mut self, x: Var, target: (usize, usize)) -> Result<Var> {
        let (c, h, w) = self.expect_chw("bilinear_upsample", x)?;
        let (th, tw) = target;
        if th == 0 || tw == 0 {
            return Err(TensorError::param("bilinear_upsample", "target size must be positive"));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; c * th * tw];
        for ch in 0..c {
            for oy in 0..th {
                let (y0, y1, fy) = bilinear_taps(oy, h, th);
                for ox in 0..tw {
                    let (x0, x1, fx) = bilinear_taps(ox, w, tw);
                    let at = |yy: usize, xx: usize| src[(ch * h + yy) * w + xx];
                    data[(ch * th + oy) * tw + ox] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
                }
            }
        }
        let out = Tensor::new(vec![c, th, tw], data)?;
        Ok(self.push(out, Op::Upsample { x }))
    }
}

pub(super) fn global_avg_backward(g_: &Graph, x: Var, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let shape = g_.shape(x).to_vec();
    let plane = shape[1] * shape[2];
    let mut d = vec![0.0; g_.value(x).len()];
    for (ch, chunk) in d.chunks_mut(plane).enumerate() {
        chunk.fill(g.data()[ch] / plane as f64);
    }
    g_.accumulate(pending, x, Tensor::new(shape, d).unwrap());
}

pub(super) fn global_max_backward(g_: &Graph, x: Var, argmax: &[usize], g: &Tensor, pending: &mut [Option<Tensor>]) {
    let mut d = vec![0.0; g_.value(x).len()];
    for (ch, &i) in argmax.iter().enumerate() {
        d[i] += g.data()[ch];
    }
    g_.accumulate(pending, x, Tensor::new(g_.shape(x).to_vec(), d).unwrap());
}

pub(super) fn window_backward(g_: &Graph, ctx: &WindowCtx, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let shape = g_.shape(ctx.x).to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = ctx.out_hw;
    let (kh, kw) = ctx.kernel;
    let mut d = vec![0.0; c * h * w];
    match ctx.mode {
        PoolMode::Max => {
            for (o, &i) in ctx.argmax.iter().enumerate() {
                d[i] += g.data()[o];
            }
        }
        PoolMode::Avg => {
            let norm = (kh * kw) as f64;
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g.data()[(ch * oh + oy) * ow + ox] / norm;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                d[(ch * h + oy * ctx.stride.0 + ky) * w + ox * ctx.stride.1 + kx] += gv;
                            }
                        }
                    }
                }
            }
        }
    }
    g_.accumulate(pending, ctx.x, Tensor::new(shape, d).unwrap());
}

pub(super) fn upsample_backward(g_: &Graph, x: Var, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let shape = g_.shape(x).to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (th, tw) = (g.shape()[1], g.shape()[2]);
    let mut d = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..th {
            let (y0, y1, fy) = bilinear_taps(oy, h, th);
            for ox in 0..tw {
                let (x0, x1, fx) = bilinear_taps(ox, w, tw);
                let gv = g.data()[(ch * th + oy) * tw + ox];
                let mut put = |yy: usize, xx: usize, wt: f64| d[(ch * h + yy) * w + xx] += wt * gv;
                put(y0, x0, (1.0 - fy) * (1.0 - fx));
                put(y0, x1, (1.0 - fy) * fx);
                put(y1, x0, fy * (1.0 - fx));
                put(y1, x1, fy * fx);
            }
        }
    }
    g_.accumulate(pending, x, Tensor::new(shape, d).unwrap());
}
