//! Attention-enhanced temporal convolution network that scores each slot of
//! a day by how likely a fingerstick measurement is there.

use std::path::Path;

use glyco_autograd::{Adam, AdamConfig, Binding, Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::domain::{normalize_glucose, time_encoding, CgmGrid, SmbgSample, DEFAULT_PE_DIM};
use crate::error::{CoreError, Result};
use crate::init::fan_in_uniform;
use crate::persist::{self, FlatRecord};
use crate::sampling::SlotScorer;

pub const MAGIC: &[u8] = b"AETCN1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AetcnConfig {
    pub num_blocks: usize,
    pub dilations: Vec<usize>,
    pub kernel: usize,
    pub hidden: usize,
    pub pe_dim: usize,
}

impl Default for AetcnConfig {
    fn default() -> Self {
        Self { num_blocks: 3, dilations: vec![1, 2, 4, 8], kernel: 3, hidden: 32, pe_dim: DEFAULT_PE_DIM }
    }
}

impl AetcnConfig {
    pub fn branches(&self) -> usize {
        self.dilations.len()
    }

    /// Output channels of each dilated branch.
    pub fn branch_width(&self) -> usize {
        self.hidden / self.branches()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Configuration(m));
        if self.num_blocks == 0 || self.kernel == 0 || self.dilations.is_empty() {
            return bad("selector needs at least one block, branch and kernel tap".into());
        }
        if self.dilations[0] == 0 || self.dilations.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("dilations {:?} must be positive and strictly increasing", self.dilations));
        }
        if self.hidden < self.branches() || !self.hidden.is_multiple_of(self.branches()) {
            return bad(format!(
                "hidden width {} must be a multiple of the branch count {}",
                self.hidden,
                self.branches()
            ));
        }
        if self.pe_dim == 0 || !self.pe_dim.is_multiple_of(2) {
            return bad(format!("encoding dimension {} must be even", self.pe_dim));
        }
        Ok(())
    }

    /// Slots of history visible to the last output slot.
    pub fn receptive_field(&self) -> usize {
        1 + self.num_blocks * (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone)]
struct BlockIds {
    branches: Vec<(ParamId, ParamId)>,
    fuse: (ParamId, ParamId),
    gate: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct Aetcn {
    cfg: AetcnConfig,
    params: ParamStore,
    blocks: Vec<BlockIds>,
    head: (ParamId, ParamId),
}

fn conv_params(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    out: usize,
    inp: usize,
    k: usize,
) -> (ParamId, ParamId) {
    let w = store.add(format!("{name}.weight"), fan_in_uniform(rng, &[out, inp, k], inp * k));
    let b = store.add(format!("{name}.bias"), fan_in_uniform(rng, &[out], inp * k));
    (w, b)
}

impl Aetcn {
    pub fn new(cfg: AetcnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for b in 0..cfg.num_blocks {
            let c_in = if b == 0 { 2 } else { cfg.hidden };
            let branches = (0..cfg.branches())
                .map(|i| {
                    let name = format!("block{b}.branch{i}");
                    conv_params(&mut params, &mut rng, &name, cfg.branch_width(), c_in, cfg.kernel)
                })
                .collect();
            let concat = cfg.branch_width() * cfg.branches();
            let fuse = conv_params(&mut params, &mut rng, &format!("block{b}.fuse"), cfg.hidden, concat, 1);
            let gate = conv_params(&mut params, &mut rng, &format!("block{b}.gate"), cfg.hidden, cfg.hidden, 1);
            blocks.push(BlockIds { branches, fuse, gate });
        }
        let head = conv_params(&mut params, &mut rng, "head", 1, cfg.hidden, 1);
        Ok(Self { cfg, params, blocks, head })
    }

    pub fn config(&self) -> &AetcnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Parameter ids of the scoring head `(weight, bias)`.
    pub fn head_ids(&self) -> (ParamId, ParamId) {
        self.head
    }

    /// Parameter ids `(weight, bias)` of one dilated branch.
    pub fn branch_ids(&self, block: usize, branch: usize) -> (ParamId, ParamId) {
        self.blocks[block].branches[branch]
    }

    /// Pre-sigmoid scores `[1, T]` for a `[2, T]` input.
    pub fn logits(&self, g: &mut Graph, p: &Binding, input: Var) -> Result<Var> {
        if g.shape(input).len() != 2 || g.shape(input)[0] != 2 {
            return Err(CoreError::Dimension(format!("selector input must be [2, T], got {:?}", g.shape(input))));
        }
        let k = self.cfg.kernel;
        let mut x = input;
        for block in &self.blocks {
            let mut outs = Vec::with_capacity(block.branches.len());
            for (&(w, b), &d) in block.branches.iter().zip(&self.cfg.dilations) {
                // Causal: slot t sees t, t-d, ..., t-d(k-1).
                outs.push(g.conv1d_dilated(x, p.var(w), Some(p.var(b)), d, (d * (k - 1), 0))?);
            }
            let cat = g.concat(&outs)?;
            let fused = g.conv1d_dilated(cat, p.var(block.fuse.0), Some(p.var(block.fuse.1)), 1, (0, 0))?;
            let gate = g.conv1d_dilated(fused, p.var(block.gate.0), Some(p.var(block.gate.1)), 1, (0, 0))?;
            let gate = g.sigmoid(gate);
            x = g.mul(fused, gate)?;
        }
        Ok(g.conv1d_dilated(x, p.var(self.head.0), Some(p.var(self.head.1)), 1, (0, 0))?)
    }

    /// Scores in `[0, 1]` for one `[2, T]` input tensor.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.constant(input.clone());
        let logits = self.logits(&mut g, &p, x)?;
        let s = g.sigmoid(logits);
        Ok(g.value(s).data().to_vec())
    }

    /// Mean binary cross-entropy of one day against soft targets.
    pub fn loss(&self, g: &mut Graph, p: &Binding, input: &Tensor, target: &[f64]) -> Result<Var> {
        let x = g.constant(input.clone());
        let logits = self.logits(g, p, x)?;
        Ok(g.bce_with_logits(logits, target)?)
    }

    fn header(&self) -> Vec<u64> {
        let c = &self.cfg;
        let mut h = vec![c.num_blocks as u64, c.kernel as u64, c.hidden as u64, c.pe_dim as u64, c.branches() as u64];
        h.extend(c.dilations.iter().map(|d| *d as u64));
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        persist::encode(MAGIC, &FlatRecord { header: self.header(), values: self.params.flatten() })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_record(persist::decode(MAGIC, bytes)?)
    }

    fn from_record(r: FlatRecord) -> Result<Self> {
        let h = &r.header;
        if h.len() < 5 || h.len() != 5 + h[4] as usize {
            return Err(CoreError::Persist("AETCN1: malformed config header".into()));
        }
        let cfg = AetcnConfig {
            num_blocks: h[0] as usize,
            kernel: h[1] as usize,
            hidden: h[2] as usize,
            pe_dim: h[3] as usize,
            dilations: h[5..].iter().map(|d| *d as usize).collect(),
        };
        let mut model = Self::new(cfg, 0)?;
        if !model.params.load_flat(&r.values) {
            return Err(CoreError::Persist(format!(
                "AETCN1: {} values for {} parameters",
                r.values.len(),
                model.params.num_scalars()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, MAGIC, &FlatRecord { header: self.header(), values: self.params.flatten() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_record(persist::read_file(path, MAGIC)?)
    }
}

/// `[2, T]` selector input: normalized glucose and the scaled time encoding.
pub fn selector_input(cgm_day_mgdl: &[f64], pe_dim: usize) -> Result<Tensor> {
    let t = cgm_day_mgdl.len();
    let mut data = Vec::with_capacity(2 * t);
    for v in cgm_day_mgdl {
        data.push(normalize_glucose(*v)?.min(1.0));
    }
    data.extend(time_encoding(t, pe_dim).into_iter().map(|v| v / pe_dim as f64));
    Ok(Tensor::new(vec![2, t], data)?)
}

impl SlotScorer for Aetcn {
    fn score_day(&self, cgm_day_mgdl: &[f64]) -> Result<Vec<f64>> {
        self.forward(&selector_input(cgm_day_mgdl, self.cfg.pe_dim)?)
    }
}

/// Tent targets: 1 at each observed slot falling linearly to 0 at
/// `tolerance` slots away; overlapping tents take the maximum.
pub fn make_selector_targets(observed: &[usize], slots: usize, tolerance: usize) -> Result<Vec<f64>> {
    let mut target = vec![0.0; slots];
    for &o in observed {
        if o >= slots {
            return Err(CoreError::Dimension(format!("observed slot {} outside {} slots", o, slots)));
        }
        let lo = o.saturating_sub(tolerance);
        let hi = (o + tolerance).min(slots - 1);
        for (t, v) in target.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let w = if tolerance == 0 { 1.0 } else { 1.0 - o.abs_diff(t) as f64 / tolerance as f64 };
            *v = f64::max(*v, w);
        }
    }
    Ok(target)
}

#[derive(Debug, Clone)]
pub struct SelectorPair {
    pub input: Tensor,
    pub target: Vec<f64>,
}

/// Half-width of the tent around each observed slot.
pub const TARGET_TOLERANCE: usize = 3;

/// One training pair per day of a CGM window and its aligned fingersticks.
/// Days without any fingerstick are skipped.
pub fn selector_pairs(grid: &CgmGrid, sample: &SmbgSample, pe_dim: usize) -> Result<Vec<SelectorPair>> {
    if sample.days() != grid.days() || sample.slots() != grid.slots() {
        return Err(CoreError::Dimension("fingerstick sample does not match its CGM window".into()));
    }
    let mut pairs = Vec::new();
    for d in 0..grid.days() {
        let observed = sample.observed_in_day(d);
        if observed.is_empty() {
            continue;
        }
        pairs.push(SelectorPair {
            input: selector_input(grid.day(d), pe_dim)?,
            target: make_selector_targets(&observed, grid.slots(), TARGET_TOLERANCE)?,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorTrainOpts {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SelectorTrainOpts {
    fn default() -> Self {
        Self { epochs: 100, lr: 3e-3, batch_size: 4, seed: 0 }
    }
}

/// Loss and gradients of one batch, reduced in batch order so the result
/// does not depend on thread scheduling.
fn batch_grads(model: &Aetcn, batch: &[&SelectorPair]) -> Result<(f64, Vec<Tensor>)> {
    let per_sample: Vec<Result<(f64, Vec<Tensor>)>> = batch
        .par_iter()
        .map(|pair| {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let loss = model.loss(&mut g, &p, &pair.input, &pair.target)?;
            g.backward(loss)?;
            Ok((g.value(loss).item(), p.grads(&g)))
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for r in per_sample {
        let (l, grads) = r?;
        total += l;
        acc = Some(match acc {
            None => grads,
            Some(mut a) => {
                for (x, y) in a.iter_mut().zip(&grads) {
                    x.data_mut().iter_mut().zip(y.data()).for_each(|(u, v)| *u += v);
                }
                a
            }
        });
    }
    let mut acc = acc.expect("batch is nonempty");
    for t in &mut acc {
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, acc))
}

/// Adam on mean BCE; returns the model and the per-epoch mean training loss.
pub fn train_selector(pairs: &[SelectorPair], cfg: AetcnConfig, opts: SelectorTrainOpts) -> Result<(Aetcn, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(CoreError::Parameter("selector training needs at least one pair".into()));
    }
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(CoreError::Parameter("epochs and batch size must be positive".into()));
    }
    let mut model = Aetcn::new(cfg, opts.seed)?;
    let mut adam = Adam::new(AdamConfig { lr: opts.lr, ..AdamConfig::default() }, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5e1ec7);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&SelectorPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, grads) = batch_grads(&model, &batch)?;
            if !loss.is_finite() {
                return Err(CoreError::NonFinite { component: "selector loss", value: loss }.in_stage(if epoch == 0 {
                    "selector epoch 1"
                } else {
                    "selector training"
                }));
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut model.params, &grads)?;
        }
        trace.push(epoch_loss / pairs.len() as f64);
    }
    Ok((model, trace))
}
