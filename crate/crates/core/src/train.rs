//! Mini-batch training of the dual-path network with model selection on
//! validation error. Batch-norm running statistics are re-estimated over the
//! training set after every epoch.

use glyco_autograd::{Adam, AdamConfig, BatchStats, BnMode, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agp::TrVector;
use crate::data::Triple;
use crate::domain::{assemble_input, NetworkInput, PositionalEncoding};
use crate::dpanet::{total_loss, Ablation, DpaNet, DpaNetConfig, LossBreakdown, LossWeights};
use crate::error::{CoreError, Result};
use crate::eval::overall_rmse;

/// Network input with its targets.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: NetworkInput,
    /// Alternative samplings of the same window; training cycles through
    /// `input` and these, one per epoch.
    pub variants: Vec<NetworkInput>,
    /// Normalized ground truth at the reconstruction resolution.
    pub truth_grid: Vec<f64>,
    pub label: TrVector,
}

impl Example {
    /// Input used during `epoch`.
    pub fn input_for_epoch(&self, epoch: usize) -> &NetworkInput {
        match epoch % (self.variants.len() + 1) {
            0 => &self.input,
            i => &self.variants[i - 1],
        }
    }
}

pub fn prepare_examples(triples: &[Triple], cfg: &DpaNetConfig) -> Result<Vec<Example>> {
    let pe = PositionalEncoding::build(cfg.days, cfg.slots, cfg.pe_dim)?;
    triples
        .par_iter()
        .map(|t| {
            Ok(Example {
                input: assemble_input(&t.sample, &pe)?,
                variants: Vec::new(),
                truth_grid: t.grid.pooled_normalized(cfg.t_pool)?,
                label: t.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds initialization and batch order.
    pub seed: u64,
    pub weights: LossWeights,
    pub ablation: Ablation,
    /// Batches are split into this many shards computed in parallel; batch
    /// normalization then uses per-shard statistics.
    pub shards: usize,
    /// Cosine decay of the learning rate from `lr` to `lr * final_lr_factor`
    /// over the epochs; 1 keeps it constant.
    pub final_lr_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            weights: LossWeights::default(),
            ablation: Ablation::Full,
            shards: 1,
            final_lr_factor: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.shards == 0 {
            return Err(CoreError::Configuration("epochs, batch size and shards must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Configuration(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.final_lr_factor > 0.0 && self.final_lr_factor <= 1.0) {
            return Err(CoreError::Configuration(format!("final_lr_factor {} outside (0, 1]", self.final_lr_factor)));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Sample-weighted means of the loss terms over the epoch.
    pub loss: LossBreakdown,
    /// Overall validation RMSE after the epoch, if there is a validation set.
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation RMSE, or the
    /// lowest training loss without validation data.
    pub model: DpaNet,
    pub trace: Vec<EpochRecord>,
    /// Zero-based.
    pub best_epoch: usize,
}

impl TrainOutcome {
    /// `epoch,total,rc,tr,a,val_rmse` rows.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,total,rc,tr,a,val_rmse\n");
        for (i, r) in self.trace.iter().enumerate() {
            let val = r.val_rmse.map_or(String::new(), |v| format!("{:.6}", v));
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{}\n",
                i + 1,
                r.loss.total,
                r.loss.rc,
                r.loss.tr,
                r.loss.a,
                val
            ));
        }
        s
    }
}

struct ShardResult {
    parts: LossBreakdown,
    grads: Vec<Tensor>,
    stats: Vec<(usize, BatchStats)>,
}

/// Summed loss terms and gradients of `sum(loss_i) * scale` over a shard.
fn shard_step(
    model: &DpaNet,
    shard: &[(&NetworkInput, &Example)],
    cfg: &TrainConfig,
    scale: f64,
) -> Result<ShardResult> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let inputs: Vec<_> = shard.iter().map(|(x, _)| g.constant(x.tensor().clone())).collect();
    let (outs, stats) = model.forward(&mut g, &p, &inputs, BnMode::Train, cfg.ablation)?;
    let mut parts = LossBreakdown::default();
    let mut sum = None;
    for (out, (_, ex)) in outs.iter().zip(shard) {
        let (l, b) = total_loss(&mut g, out, &ex.truth_grid, ex.label, &cfg.weights, cfg.ablation)?;
        parts.total += b.total;
        parts.rc += b.rc;
        parts.tr += b.tr;
        parts.a += b.a;
        sum = Some(match sum {
            None => l,
            Some(s) => g.add(s, l)?,
        });
    }
    let loss = g.affine(sum.expect("shard is nonempty"), scale, 0.0);
    g.backward(loss)?;
    Ok(ShardResult { parts, grads: p.grads(&g), stats })
}

fn add_into(acc: &mut [Tensor], other: &[Tensor]) {
    for (x, y) in acc.iter_mut().zip(other) {
        x.data_mut().iter_mut().zip(y.data()).for_each(|(u, v)| *u += v);
    }
}

/// Divergence guard: three consecutive epochs above ten times the first
/// epoch's loss abort training.
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 3;

/// Learning rate used during `epoch` (zero-based).
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs < 2 {
        return cfg.lr;
    }
    let progress = epoch as f64 / (cfg.epochs - 1) as f64;
    let floor = cfg.lr * cfg.final_lr_factor;
    floor + (cfg.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub fn train(
    model_cfg: DpaNetConfig,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::Parameter("training split is empty".into()));
    }
    let mut model = DpaNet::new(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD9A_0E7);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let val_truth: Vec<TrVector> = val_set.iter().map(|e| e.label).collect();
    let val_inputs: Vec<NetworkInput> = val_set.iter().map(|e| e.input.clone()).collect();

    let mut trace: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, DpaNet)> = None;
    let mut above = 0;
    for epoch in 0..cfg.epochs {
        adam.config.lr = learning_rate(cfg, epoch);
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&NetworkInput, &Example)> =
                chunk.iter().map(|&i| (train_set[i].input_for_epoch(epoch), &train_set[i])).collect();
            let scale = 1.0 / batch.len() as f64;
            let shard_len = batch.len().div_ceil(cfg.shards);
            let results: Vec<Result<ShardResult>> =
                batch.par_chunks(shard_len).map(|s| shard_step(&model, s, cfg, scale)).collect();
            let mut grads: Option<Vec<Tensor>> = None;
            let mut stats = Vec::new();
            for r in results {
                let r = r?;
                sums.total += r.parts.total;
                sums.rc += r.parts.rc;
                sums.tr += r.parts.tr;
                sums.a += r.parts.a;
                match &mut grads {
                    None => grads = Some(r.grads),
                    Some(acc) => add_into(acc, &r.grads),
                }
                stats.extend(r.stats);
            }
            adam.step(model.params_mut(), &grads.expect("batch is nonempty"))?;
            model.update_running_stats(&stats);
        }
        if cfg.ablation.uses_lower() {
            let inputs: Vec<NetworkInput> = train_set.iter().map(|e| e.input_for_epoch(epoch).clone()).collect();
            model.recalibrate_running_stats(&inputs, cfg.batch_size)?;
        }
        let n = train_set.len() as f64;
        let loss = LossBreakdown { total: sums.total / n, rc: sums.rc / n, tr: sums.tr / n, a: sums.a / n };
        if !loss.total.is_finite() {
            return Err(CoreError::NonFinite { component: "training loss", value: loss.total });
        }
        let val_rmse = if val_set.is_empty() {
            None
        } else {
            Some(overall_rmse(&model.predict(&val_inputs, cfg.ablation, cfg.weights.thresholds)?, &val_truth)?)
        };
        trace.push(EpochRecord { loss, val_rmse });

        let initial = trace[0].loss.total;
        above = if loss.total > DIVERGENCE_FACTOR * initial { above + 1 } else { 0 };
        if above >= DIVERGENCE_PATIENCE {
            return Err(CoreError::Diverged {
                epoch: epoch + 1,
                loss: loss.total,
                initial,
                trace: trace.iter().map(|r| r.loss.total).collect(),
            });
        }
        let score = val_rmse.unwrap_or(loss.total);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, trace, best_epoch })
}
