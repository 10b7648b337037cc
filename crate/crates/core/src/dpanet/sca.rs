//! Spatial-channel attention path: a stem convolution, stacked attention
//! blocks, and a 1×1 reconstruction head.

use glyco_autograd::{Binding, Conv2dOpts, Graph, ParamId, ParamStore, PoolMode, PoolScope, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::init::fan_in_uniform;

/// Shared two-layer bottleneck applied to average- and max-pooled channel
/// descriptors; returns per-channel weights `[C]` in (0, 1).
pub fn channel_attention(g: &mut Graph, feat: Var, w1: Var, w2: Var) -> Result<Var> {
    let c = g.shape(feat)[0];
    let branch = |g: &mut Graph, mode: PoolMode| -> Result<Var> {
        let z = g.pool(feat, mode, PoolScope::Global)?;
        let z = g.reshape(z, &[c, 1])?;
        let h = g.matmul(w1, z)?;
        let h = g.relu(h);
        Ok(g.matmul(w2, h)?)
    };
    let avg = branch(g, PoolMode::Avg)?;
    let max = branch(g, PoolMode::Max)?;
    let s = g.add(avg, max)?;
    let s = g.sigmoid(s);
    Ok(g.reshape(s, &[c])?)
}

/// `(weight, bias)` pairs of the three 1×1 projections.
#[derive(Debug, Clone, Copy)]
pub struct QkvVars {
    pub q: (Var, Var),
    pub k: (Var, Var),
    pub v: (Var, Var),
}

/// Queries `[N, C']`, keys `[C', N]` and values `[C, N]` over the `N = D·T`
/// positions of `feat`.
fn project_qkv(g: &mut Graph, feat: Var, qkv: QkvVars) -> Result<(Var, Var, Var)> {
    let shape = g.shape(feat).to_vec();
    let n = shape[1] * shape[2];
    let proj = |g: &mut Graph, (w, b): (Var, Var)| -> Result<Var> {
        let y = g.conv2d(feat, w, Some(b), Conv2dOpts::default())?;
        let ch = g.shape(y)[0];
        Ok(g.reshape(y, &[ch, n])?)
    };
    let q = proj(g, qkv.q)?;
    let q = g.transpose(q)?;
    let k = proj(g, qkv.k)?;
    let v = proj(g, qkv.v)?;
    Ok((q, k, v))
}

/// Row-stochastic position-to-position map `A = softmax(Q'K')` of shape
/// `[D·T, D·T]`.
pub fn attention_map(g: &mut Graph, feat: Var, qkv: QkvVars) -> Result<Var> {
    let (q, k, _) = project_qkv(g, feat, qkv)?;
    let logits = g.matmul(q, k)?;
    Ok(g.softmax(logits, 1)?)
}

/// `γ1·O + feat`, where position `j` of `O` is the mean of the values
/// weighted by row `j` of the attention map.
pub fn spatial_attention(g: &mut Graph, feat: Var, qkv: QkvVars, gamma1: Var) -> Result<Var> {
    let shape = g.shape(feat).to_vec();
    let (q, k, v) = project_qkv(g, feat, qkv)?;
    let o = g.attention(q, k, v)?;
    let o = g.reshape(o, &shape)?;
    let o = g.scale_by(gamma1, o)?;
    Ok(g.add(o, feat)?)
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub w1: Var,
    pub w2: Var,
    pub qkv: QkvVars,
    pub gamma1: Var,
    pub gamma2: Var,
}

/// `γ2·feat + s ⊙ (γ1·O + feat)` with `s` from [`channel_attention`].
pub fn sca_block(g: &mut Graph, feat: Var, b: &BlockVars) -> Result<Var> {
    let s = channel_attention(g, feat, b.w1, b.w2)?;
    let sa = spatial_attention(g, feat, b.qkv, b.gamma1)?;
    let fused = g.broadcast_mul(sa, s)?;
    let skip = g.scale_by(b.gamma2, feat)?;
    Ok(g.add(skip, fused)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaConfig {
    pub channels: usize,
    pub r_c: usize,
    pub r_s: usize,
    pub blocks: usize,
}

impl Default for ScaConfig {
    fn default() -> Self {
        Self { channels: 32, r_c: 4, r_s: 4, blocks: 2 }
    }
}

impl ScaConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0
            || self.r_c == 0
            || self.r_s == 0
            || !c.is_multiple_of(self.r_c)
            || !c.is_multiple_of(self.r_s)
            || c < self.r_c.max(self.r_s)
        {
            return Err(CoreError::Configuration(format!(
                "attention channels {} must be a positive multiple of r_c {} and r_s {}",
                c, self.r_c, self.r_s
            )));
        }
        if self.blocks == 0 {
            return Err(CoreError::Configuration("attention path needs at least one block".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIds {
    pub w1: ParamId,
    pub w2: ParamId,
    pub q: (ParamId, ParamId),
    pub k: (ParamId, ParamId),
    pub v: (ParamId, ParamId),
    pub gamma1: ParamId,
    pub gamma2: ParamId,
}

impl BlockIds {
    pub fn bind(&self, p: &Binding) -> BlockVars {
        let pair = |(w, b): (ParamId, ParamId)| (p.var(w), p.var(b));
        BlockVars {
            w1: p.var(self.w1),
            w2: p.var(self.w2),
            qkv: QkvVars { q: pair(self.q), k: pair(self.k), v: pair(self.v) },
            gamma1: p.var(self.gamma1),
            gamma2: p.var(self.gamma2),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ScaIds {
    pub stem: (ParamId, ParamId),
    pub blocks: Vec<BlockIds>,
    pub head: (ParamId, ParamId),
}

fn conv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    out: usize,
    inp: usize,
    k: usize,
) -> (ParamId, ParamId) {
    let fan = inp * k * k;
    let w = store.add(format!("{name}.weight"), fan_in_uniform(rng, &[out, inp, k, k], fan));
    let b = store.add(format!("{name}.bias"), fan_in_uniform(rng, &[out], fan));
    (w, b)
}

impl ScaIds {
    pub fn build(cfg: &ScaConfig, in_channels: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.channels;
        let (cr, cq) = (c / cfg.r_c, c / cfg.r_s);
        let stem = conv(store, rng, "sca.stem", c, in_channels, 3);
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let n = format!("sca.block{i}");
                BlockIds {
                    w1: store.add(format!("{n}.ca.w1"), fan_in_uniform(rng, &[cr, c], c)),
                    w2: store.add(format!("{n}.ca.w2"), fan_in_uniform(rng, &[c, cr], cr)),
                    q: conv(store, rng, &format!("{n}.query"), cq, c, 1),
                    k: conv(store, rng, &format!("{n}.key"), cq, c, 1),
                    v: conv(store, rng, &format!("{n}.value"), c, c, 1),
                    gamma1: store.add(format!("{n}.gamma1"), Tensor::zeros(&[1])),
                    gamma2: store.add(format!("{n}.gamma2"), Tensor::zeros(&[1])),
                }
            })
            .collect();
        let head = conv(store, rng, "sca.head", 1, c, 1);
        Self { stem, blocks, head }
    }

    /// Reconstruction `[D, T]` in normalized units from a `[3, D, T]` input.
    pub fn forward(&self, g: &mut Graph, p: &Binding, input: Var) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        let mut x = g.conv2d(input, p.var(self.stem.0), Some(p.var(self.stem.1)), Conv2dOpts::same(3, 1))?;
        for b in &self.blocks {
            x = sca_block(g, x, &b.bind(p))?;
        }
        let y = g.conv2d(x, p.var(self.head.0), Some(p.var(self.head.1)), Conv2dOpts::default())?;
        Ok(g.reshape(y, &shape[1..])?)
    }
}
