use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-channel statistics observed by one training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the estimate folded into running statistics.
    pub var: Vec<f64>,
}

/// Running statistics used in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    /// Mean 0, variance 1, momentum 0.1, eps 1e-5.
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels], momentum: 0.1, eps: 1e-5 }
    }

    pub fn update(&mut self, batch: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

pub(crate) struct BnCtx {
    pub(crate) x: Var,
    pub(crate) gamma: Var,
    pub(crate) beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl Graph {
    /// (batch, channels, plane) for `[C,H,W]` or `[N,C,H,W]` input.
    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        let (n, c, plane) = match *s {
            [c, h, w] => (1, c, h * w),
            [n, c, h, w] => (n, c, h * w),
            _ => return Err(TensorError::dim("batchnorm", format!("expected [C,H,W] or [N,C,H,W], got {:?}", s))),
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::dim("batchnorm", format!("gamma and beta must be [{}]", c)));
        }
        Ok((n, c, plane))
    }

    fn bn_push(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: Vec<f64>, train: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (n, c, plane) = self.bn_check(x, gamma, beta)?;
        let src = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * plane;
                for i in start..start + plane {
                    xhat[i] = (src[i] - mean[ch]) * inv_std[ch];
                    out[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::BatchNorm(BnCtx { x, gamma, beta, xhat, inv_std, train })))
    }

    /// Normalizes each channel by its mean and variance over batch and
    /// spatial positions.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, plane) = self.bn_check(x, gamma, beta)?;
        let count = n * plane;
        if count < 2 {
            return Err(TensorError::param("batchnorm", "training mode needs more than one value per channel"));
        }
        let src = self.value(x).data();
        let channel = |ch: usize| (0..n).flat_map(move |b| src[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter());
        let mut mean = Vec::with_capacity(c);
        let mut var = Vec::with_capacity(c);
        let mut inv_std = Vec::with_capacity(c);
        for ch in 0..c {
            let m = channel(ch).sum::<f64>() / count as f64;
            let ss: f64 = channel(ch).map(|v| (v - m) * (v - m)).sum();
            mean.push(m);
            var.push(ss / (count - 1) as f64);
            inv_std.push(1.0 / (ss / count as f64 + eps).sqrt());
        }
        let out = self.bn_push(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, BatchStats { mean, var }))
    }

    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, stats: &RunningStats) -> Result<Var> {
        let (_, c, _) = self.bn_check(x, gamma, beta)?;
        if stats.mean.len() != c {
            return Err(TensorError::dim(
                "batchnorm",
                format!("running stats hold {} channels, input has {}", stats.mean.len(), c),
            ));
        }
        let inv_std = stats.var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let mean = stats.mean.clone();
        self.bn_push(x, gamma, beta, &mean, inv_std, false)
    }

    /// Train mode normalizes by batch statistics and folds them into
    /// `stats`; eval mode reads `stats`.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode, stats: &mut RunningStats) -> Result<Var> {
        match mode {
            BnMode::Train => {
                let (out, batch) = self.batchnorm_train(x, gamma, beta, stats.eps)?;
                stats.update(&batch);
                Ok(out)
            }
            BnMode::Eval => self.batchnorm_eval(x, gamma, beta, stats),
        }
    }
}

pub(super) fn batchnorm_backward(g_: &Graph, ctx: &BnCtx, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let shape = g_.shape(ctx.x).to_vec();
    let (n, c, plane) = match shape[..] {
        [c, h, w] => (1, c, h * w),
        [n, c, h, w] => (n, c, h * w),
        _ => unreachable!("checked in forward"),
    };
    let gamma = g_.value(ctx.gamma).data();
    let gd = g.data();
    let mut dx = vec![0.0; gd.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let ranges = |ch: usize| (0..n).map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane);
    let count = (n * plane) as f64;
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for r in ranges(ch) {
            for i in r {
                sum_g += gd[i];
                sum_gx += gd[i] * ctx.xhat[i];
            }
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let k = gamma[ch] * ctx.inv_std[ch];
        for r in ranges(ch) {
            for i in r {
                dx[i] = if ctx.train { k * (gd[i] - sum_g / count - ctx.xhat[i] * sum_gx / count) } else { k * gd[i] };
            }
        }
    }
    g_.accumulate(pending, ctx.x, Tensor::new(shape, dx).unwrap());
    g_.accumulate(pending, ctx.gamma, Tensor::new(vec![c], dgamma).unwrap());
    g_.accumulate(pending, ctx.beta, Tensor::new(vec![c], dbeta).unwrap());
}
