//! Dual-path network: an attention path reconstructing a dense trajectory
//! and a residual path predicting the time-in-range triple directly.

mod loss;
mod resnet;
mod sca;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use glyco_autograd::{BatchStats, Binding, BnMode, Graph, ParamStore, PoolMode, PoolScope, RunningStats, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use loss::{total_loss, LossBreakdown, LossWeights};
pub use resnet::ResnetPathConfig;
pub use sca::{attention_map, channel_attention, sca_block, spatial_attention, BlockVars, QkvVars, ScaConfig};

use crate::agp::{tr_hard_from_values, Thresholds, TrVector};
use crate::domain::{NetworkInput, DEFAULT_DAYS, DEFAULT_PE_DIM, GLUCOSE_SCALE, SLOTS_PER_DAY};
use crate::error::{CoreError, Result};
use crate::persist::{self, FlatRecord};
use resnet::{BnRun, ResnetIds};
use sca::ScaIds;

pub const MAGIC: &[u8] = b"DPANET1";
const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpaNetConfig {
    pub days: usize,
    pub slots: usize,
    /// Average-pool factor applied to the slot axis before both paths;
    /// 1 keeps full resolution.
    pub t_pool: usize,
    pub pe_dim: usize,
    pub sca: ScaConfig,
    pub resnet: ResnetPathConfig,
}

impl Default for DpaNetConfig {
    fn default() -> Self {
        Self {
            days: DEFAULT_DAYS,
            slots: SLOTS_PER_DAY,
            t_pool: 3,
            pe_dim: DEFAULT_PE_DIM,
            sca: ScaConfig::default(),
            resnet: ResnetPathConfig::default(),
        }
    }
}

impl DpaNetConfig {
    pub fn pooled_slots(&self) -> usize {
        self.slots / self.t_pool
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 || self.slots == 0 || self.t_pool == 0 || !self.slots.is_multiple_of(self.t_pool) {
            return Err(CoreError::Configuration(format!(
                "pool factor {} must divide {} slots",
                self.t_pool, self.slots
            )));
        }
        if self.pe_dim == 0 || !self.pe_dim.is_multiple_of(2) {
            return Err(CoreError::Configuration(format!("encoding dimension {} must be even", self.pe_dim)));
        }
        self.sca.validate()?;
        self.resnet.validate()
    }

    fn header(&self) -> Vec<u64> {
        let r = &self.resnet;
        let mut h = vec![
            self.days,
            self.slots,
            self.t_pool,
            self.pe_dim,
            self.sca.channels,
            self.sca.r_c,
            self.sca.r_s,
            self.sca.blocks,
            r.aspp_channels,
            r.widths.len(),
        ];
        h.extend(&r.widths);
        h.extend(&r.strides);
        h.extend(&r.aspp_dilations);
        h.into_iter().map(|v| v as u64).collect()
    }

    fn from_header(h: &[u64]) -> Result<Self> {
        let bad = || CoreError::Persist("DPANET1: malformed config header".into());
        let h: Vec<usize> = h.iter().map(|v| *v as usize).collect();
        let n = *h.get(9).ok_or_else(bad)?;
        if h.len() != 10 + 2 * n + 3 {
            return Err(bad());
        }
        Ok(Self {
            days: h[0],
            slots: h[1],
            t_pool: h[2],
            pe_dim: h[3],
            sca: ScaConfig { channels: h[4], r_c: h[5], r_s: h[6], blocks: h[7] },
            resnet: ResnetPathConfig {
                aspp_channels: h[8],
                widths: h[10..10 + n].to_vec(),
                strides: h[10 + n..10 + 2 * n].to_vec(),
                aspp_dilations: h[10 + 2 * n..].to_vec(),
            },
        })
    }
}

/// Which paths and loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    LowerOnly,
    UpperOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::LowerOnly, Ablation::UpperOnly];

    pub fn uses_upper(self) -> bool {
        self != Ablation::LowerOnly
    }

    pub fn uses_lower(self) -> bool {
        self != Ablation::UpperOnly
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::LowerOnly => "lower-only",
            Ablation::UpperOnly => "upper-only",
        })
    }
}

impl FromStr for Ablation {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "lower-only" => Ok(Ablation::LowerOnly),
            "upper-only" => Ok(Ablation::UpperOnly),
            _ => Err(CoreError::Configuration(format!("unknown ablation mode {s:?}"))),
        }
    }
}

/// Training-mode batch statistics keyed by batch-norm layer index.
pub type ObservedStats = Vec<(usize, BatchStats)>;

/// Per-sample outputs; a path the ablation skips yields `None`.
#[derive(Debug, Clone, Copy)]
pub struct SampleOutput {
    /// `[D, T / t_pool]` normalized reconstruction.
    pub recon: Option<Var>,
    /// `[3]` direct prediction in (TAR, TIR, TBR) order.
    pub tr_lower: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct DpaNet {
    cfg: DpaNetConfig,
    params: ParamStore,
    sca: ScaIds,
    resnet: ResnetIds,
    bn_stats: Vec<RunningStats>,
}

impl DpaNet {
    pub fn new(cfg: DpaNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let sca = ScaIds::build(&cfg.sca, INPUT_CHANNELS, &mut params, &mut rng);
        let mut bn_channels = Vec::new();
        let resnet = ResnetIds::build(&cfg.resnet, INPUT_CHANNELS, &mut params, &mut rng, &mut bn_channels);
        let bn_stats = bn_channels.into_iter().map(RunningStats::new).collect();
        Ok(Self { cfg, params, sca, resnet, bn_stats })
    }

    pub fn config(&self) -> &DpaNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.bn_stats
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, observed: &[(usize, BatchStats)]) {
        for (i, s) in observed {
            self.bn_stats[*i].update(s);
        }
    }

    /// Replaces the running statistics by the average of training-mode batch
    /// statistics over `inputs`, taken with the current parameters.
    pub fn recalibrate_running_stats(&mut self, inputs: &[NetworkInput], batch_size: usize) -> Result<()> {
        if inputs.is_empty() || batch_size == 0 {
            return Err(CoreError::Parameter("recalibration needs inputs and a positive batch size".into()));
        }
        let batches: Vec<Vec<(usize, BatchStats)>> = inputs
            .par_chunks(batch_size)
            .map(|chunk| {
                let mut g = Graph::new();
                let p = self.params.bind(&mut g);
                let xs: Vec<Var> = chunk.iter().map(|x| g.constant(x.tensor().clone())).collect();
                Ok(self.forward(&mut g, &p, &xs, BnMode::Train, Ablation::LowerOnly)?.1)
            })
            .collect::<Result<_>>()?;
        let n = batches.len() as f64;
        for s in &mut self.bn_stats {
            s.mean.iter_mut().for_each(|v| *v = 0.0);
            s.var.iter_mut().for_each(|v| *v = 0.0);
        }
        for batch in &batches {
            for (i, b) in batch {
                let s = &mut self.bn_stats[*i];
                s.mean.iter_mut().zip(&b.mean).for_each(|(r, v)| *r += v / n);
                s.var.iter_mut().zip(&b.var).for_each(|(r, v)| *r += v / n);
            }
        }
        Ok(())
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let want = [INPUT_CHANNELS, self.cfg.days, self.cfg.slots];
        if g.shape(x) != want {
            return Err(CoreError::Dimension(format!("network input {:?}, expected {:?}", g.shape(x), want)));
        }
        Ok(())
    }

    /// Runs the active paths on a batch of `[3, D, T]` inputs. In training
    /// mode also returns the batch statistics to fold in after the step.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Binding,
        inputs: &[Var],
        mode: BnMode,
        ablation: Ablation,
    ) -> Result<(Vec<SampleOutput>, ObservedStats)> {
        if inputs.is_empty() {
            return Err(CoreError::Parameter("empty batch".into()));
        }
        let mut pooled = Vec::with_capacity(inputs.len());
        for &x in inputs {
            self.check_input(g, x)?;
            pooled.push(if self.cfg.t_pool > 1 {
                let k = (1, self.cfg.t_pool);
                g.pool(x, PoolMode::Avg, PoolScope::Window { kernel: k, stride: k })?
            } else {
                x
            });
        }
        let recon = if ablation.uses_upper() {
            pooled.iter().map(|x| self.sca.forward(g, p, *x).map(Some)).collect::<Result<Vec<_>>>()?
        } else {
            vec![None; inputs.len()]
        };
        let mut bn = BnRun { mode, running: &self.bn_stats, observed: Vec::new() };
        let lower = if ablation.uses_lower() {
            self.resnet.forward(g, p, &pooled, &mut bn)?.into_iter().map(Some).collect()
        } else {
            vec![None; inputs.len()]
        };
        let outputs = recon.into_iter().zip(lower).map(|(recon, tr_lower)| SampleOutput { recon, tr_lower }).collect();
        Ok((outputs, bn.observed))
    }

    /// Evaluation-mode estimate for one input: the direct head when it is
    /// active, otherwise exact counting on the reconstruction.
    pub fn predict_one(&self, input: &NetworkInput, ablation: Ablation, th: Thresholds) -> Result<TrVector> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.constant(input.tensor().clone());
        let (out, _) = self.forward(&mut g, &p, &[x], BnMode::Eval, ablation)?;
        match (out[0].tr_lower, out[0].recon) {
            (Some(tr), _) => Ok(TrVector::from_array(g.value(tr).data().try_into().expect("three outputs"))),
            (None, Some(recon)) => {
                let mgdl: Vec<f64> = g.value(recon).data().iter().map(|v| v * GLUCOSE_SCALE).collect();
                tr_hard_from_values(&mgdl, th)
            }
            (None, None) => unreachable!("every ablation keeps a path"),
        }
    }

    pub fn predict(&self, inputs: &[NetworkInput], ablation: Ablation, th: Thresholds) -> Result<Vec<TrVector>> {
        inputs.par_iter().map(|x| self.predict_one(x, ablation, th)).collect()
    }

    /// Reconstructed trajectory in mg/dL at the pooled resolution.
    pub fn reconstruct(&self, input: &NetworkInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.constant(input.tensor().clone());
        let (out, _) = self.forward(&mut g, &p, &[x], BnMode::Eval, Ablation::UpperOnly)?;
        let recon = out[0].recon.expect("upper path active");
        Ok(g.value(recon).data().iter().map(|v| v * GLUCOSE_SCALE).collect())
    }

    fn record(&self) -> FlatRecord {
        let mut values = self.params.flatten();
        for s in &self.bn_stats {
            values.extend(&s.mean);
            values.extend(&s.var);
        }
        FlatRecord { header: self.cfg.header(), values }
    }

    fn from_record(r: FlatRecord) -> Result<Self> {
        let cfg = DpaNetConfig::from_header(&r.header)?;
        let mut model = Self::new(cfg, 0)?;
        let n_params = model.params.num_scalars();
        let n_stats: usize = model.bn_stats.iter().map(|s| 2 * s.mean.len()).sum();
        if r.values.len() != n_params + n_stats {
            return Err(CoreError::Persist(format!(
                "DPANET1: {} values, expected {}",
                r.values.len(),
                n_params + n_stats
            )));
        }
        model.params.load_flat(&r.values[..n_params]);
        let mut rest = &r.values[n_params..];
        for s in &mut model.bn_stats {
            let c = s.mean.len();
            s.mean.copy_from_slice(&rest[..c]);
            s.var.copy_from_slice(&rest[c..2 * c]);
            rest = &rest[2 * c..];
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        persist::encode(MAGIC, &self.record())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_record(persist::decode(MAGIC, bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, MAGIC, &self.record())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_record(persist::read_file(path, MAGIC)?)
    }
}
