//! Residual backbone with atrous spatial pyramid pooling and a softmax
//! head predicting (TAR, TIR, TBR) directly. Operates on a whole batch so
//! batch normalization sees batch statistics.

use glyco_autograd::{
    BatchStats, Binding, BnMode, Conv2dOpts, Graph, ParamId, ParamStore, PoolMode, PoolScope, RunningStats, Tensor, Var,
};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::init::fan_in_uniform;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResnetPathConfig {
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub aspp_dilations: Vec<usize>,
    pub aspp_channels: usize,
}

impl Default for ResnetPathConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            strides: vec![1, 2, 2, 2],
            aspp_dilations: vec![6, 12, 18],
            aspp_channels: 32,
        }
    }
}

impl ResnetPathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(CoreError::Configuration(format!(
                "{} residual widths but {} strides",
                self.widths.len(),
                self.strides.len()
            )));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) || self.aspp_channels == 0 {
            return Err(CoreError::Configuration("residual widths, strides and ASPP width must be positive".into()));
        }
        if self.aspp_dilations.len() != 3 || self.aspp_dilations.contains(&0) {
            return Err(CoreError::Configuration(format!(
                "ASPP needs three positive atrous rates, got {:?}",
                self.aspp_dilations
            )));
        }
        Ok(())
    }

    /// Spatial size after the residual layers.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.strides.iter().fold((h, w), |(h, w), s| ((h - 1) / s + 1, (w - 1) / s + 1))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    /// Index into the model's running statistics.
    stats: usize,
}

#[derive(Debug, Clone)]
struct ResidualIds {
    conv1: ParamId,
    bn1: BnIds,
    conv2: ParamId,
    bn2: BnIds,
    proj: Option<(ParamId, BnIds)>,
    stride: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ResnetIds {
    layers: Vec<ResidualIds>,
    aspp_1x1: (ParamId, BnIds),
    aspp_atrous: Vec<(ParamId, BnIds, usize)>,
    aspp_pool: (ParamId, ParamId),
    aspp_fuse: (ParamId, BnIds),
    fc: (ParamId, ParamId),
}

/// Batch-norm context for one forward pass.
pub(crate) struct BnRun<'a> {
    pub mode: BnMode,
    pub running: &'a [RunningStats],
    /// Batch statistics in layer order, filled in training mode.
    pub observed: Vec<(usize, BatchStats)>,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    bn_channels: &'a mut Vec<usize>,
}

impl Builder<'_> {
    fn kernel(&mut self, name: &str, out: usize, inp: usize, k: usize) -> ParamId {
        let t = fan_in_uniform(self.rng, &[out, inp, k, k], inp * k * k);
        self.store.add(format!("{name}.weight"), t)
    }

    fn bn(&mut self, name: &str, c: usize) -> BnIds {
        let gamma = self.store.add(format!("{name}.gamma"), Tensor::ones(&[c]));
        let beta = self.store.add(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.bn_channels.push(c);
        BnIds { gamma, beta, stats: self.bn_channels.len() - 1 }
    }
}

impl ResnetIds {
    /// Registers parameters; appends the channel count of every batch-norm
    /// layer to `bn_channels`.
    pub fn build(
        cfg: &ResnetPathConfig,
        in_channels: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        bn_channels: &mut Vec<usize>,
    ) -> Self {
        let mut b = Builder { store, rng, bn_channels };
        let mut c_prev = in_channels;
        let mut layers = Vec::with_capacity(cfg.widths.len());
        for (i, (&w, &stride)) in cfg.widths.iter().zip(&cfg.strides).enumerate() {
            let n = format!("resnet.layer{i}");
            let conv1 = b.kernel(&format!("{n}.conv1"), w, c_prev, 3);
            let bn1 = b.bn(&format!("{n}.bn1"), w);
            let conv2 = b.kernel(&format!("{n}.conv2"), w, w, 3);
            let bn2 = b.bn(&format!("{n}.bn2"), w);
            let proj = (c_prev != w || stride != 1)
                .then(|| (b.kernel(&format!("{n}.proj"), w, c_prev, 1), b.bn(&format!("{n}.proj_bn"), w)));
            layers.push(ResidualIds { conv1, bn1, conv2, bn2, proj, stride });
            c_prev = w;
        }
        let a = cfg.aspp_channels;
        let aspp_1x1 = (b.kernel("aspp.conv1x1", a, c_prev, 1), b.bn("aspp.bn1x1", a));
        let aspp_atrous = cfg
            .aspp_dilations
            .iter()
            .map(|&d| (b.kernel(&format!("aspp.atrous{d}"), a, c_prev, 3), b.bn(&format!("aspp.bn_atrous{d}"), a), d))
            .collect();
        let pool_w = b.kernel("aspp.pool", a, c_prev, 1);
        let pool_b = b.store.add("aspp.pool.bias", fan_in_uniform(b.rng, &[a], c_prev));
        let aspp_fuse = (b.kernel("aspp.fuse", a, 5 * a, 1), b.bn("aspp.bn_fuse", a));
        let fc_w = b.store.add("head.fc.weight", fan_in_uniform(b.rng, &[3, a], a));
        let fc_b = b.store.add("head.fc.bias", fan_in_uniform(b.rng, &[3], a));
        Self { layers, aspp_1x1, aspp_atrous, aspp_pool: (pool_w, pool_b), aspp_fuse, fc: (fc_w, fc_b) }
    }

    /// (TAR, TIR, TBR) `[3]` for each `[C, H, W]` input of the batch.
    pub fn forward(&self, g: &mut Graph, p: &Binding, inputs: &[Var], bn: &mut BnRun) -> Result<Vec<Var>> {
        let mut xs = inputs.to_vec();
        for l in &self.layers {
            let opts = Conv2dOpts { stride: l.stride, padding: 1, dilation: 1 };
            let h = conv_each(g, &xs, p.var(l.conv1), opts)?;
            let h = batchnorm(g, p, &h, l.bn1, bn)?;
            let h = relu_each(g, &h);
            let h = conv_each(g, &h, p.var(l.conv2), Conv2dOpts::same(3, 1))?;
            let h = batchnorm(g, p, &h, l.bn2, bn)?;
            let skip = match l.proj {
                Some((w, ids)) => {
                    let s = conv_each(g, &xs, p.var(w), Conv2dOpts { stride: l.stride, padding: 0, dilation: 1 })?;
                    batchnorm(g, p, &s, ids, bn)?
                }
                None => xs.clone(),
            };
            xs = Vec::with_capacity(h.len());
            for (a, b) in h.iter().zip(&skip) {
                let sum = g.add(*a, *b)?;
                xs.push(g.relu(sum));
            }
        }

        let mut branches: Vec<Vec<Var>> = Vec::with_capacity(5);
        let h = conv_each(g, &xs, p.var(self.aspp_1x1.0), Conv2dOpts::default())?;
        let h = batchnorm(g, p, &h, self.aspp_1x1.1, bn)?;
        branches.push(relu_each(g, &h));
        for &(w, ids, d) in &self.aspp_atrous {
            let h = conv_each(g, &xs, p.var(w), Conv2dOpts::same(3, d))?;
            let h = batchnorm(g, p, &h, ids, bn)?;
            branches.push(relu_each(g, &h));
        }
        let mut pooled = Vec::with_capacity(xs.len());
        for &x in &xs {
            let (hh, ww) = (g.shape(x)[1], g.shape(x)[2]);
            let z = g.pool(x, PoolMode::Avg, PoolScope::Global)?;
            let z = g.conv2d(z, p.var(self.aspp_pool.0), Some(p.var(self.aspp_pool.1)), Conv2dOpts::default())?;
            let z = g.relu(z);
            pooled.push(g.bilinear_upsample(z, (hh, ww))?);
        }
        branches.push(pooled);

        let mut fused_in = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let parts: Vec<Var> = branches.iter().map(|b| b[i]).collect();
            fused_in.push(g.concat(&parts)?);
        }
        let h = conv_each(g, &fused_in, p.var(self.aspp_fuse.0), Conv2dOpts::default())?;
        let h = batchnorm(g, p, &h, self.aspp_fuse.1, bn)?;
        let feats = relu_each(g, &h);

        let mut out = Vec::with_capacity(feats.len());
        for f in feats {
            let c = g.shape(f)[0];
            let v = g.pool(f, PoolMode::Avg, PoolScope::Global)?;
            let v = g.reshape(v, &[c, 1])?;
            let eta = g.matmul(p.var(self.fc.0), v)?;
            let eta = g.reshape(eta, &[3])?;
            let eta = g.add(eta, p.var(self.fc.1))?;
            out.push(g.softmax(eta, 0)?);
        }
        Ok(out)
    }
}

fn conv_each(g: &mut Graph, xs: &[Var], w: Var, opts: Conv2dOpts) -> Result<Vec<Var>> {
    xs.iter().map(|x| Ok(g.conv2d(*x, w, None, opts)?)).collect()
}

fn relu_each(g: &mut Graph, xs: &[Var]) -> Vec<Var> {
    xs.iter().map(|x| g.relu(*x)).collect()
}

/// Normalizes the batch jointly in training mode, per sample with running
/// statistics in evaluation mode.
fn batchnorm(g: &mut Graph, p: &Binding, xs: &[Var], ids: BnIds, bn: &mut BnRun) -> Result<Vec<Var>> {
    let (gamma, beta) = (p.var(ids.gamma), p.var(ids.beta));
    match bn.mode {
        BnMode::Eval => {
            let stats = &bn.running[ids.stats];
            xs.iter().map(|x| Ok(g.batchnorm_eval(*x, gamma, beta, stats)?)).collect()
        }
        BnMode::Train => {
            let stacked = g.stack(xs)?;
            let (y, stats) = g.batchnorm_train(stacked, gamma, beta, bn.running[ids.stats].eps)?;
            bn.observed.push((ids.stats, stats));
            (0..xs.len()).map(|i| Ok(g.index0(y, i)?)).collect()
        }
    }
}
