//! Flat `key = value` experiment configuration with namespaced keys.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::dpanet::{Ablation, DpaNetConfig, LossWeights};
use crate::error::{CoreError, Result};
use crate::sampling::{SamplingPlan, SamplingStrategy, DEFAULT_DELTA, DEFAULT_K, DEFAULT_RATE};
use crate::selector::{AetcnConfig, SelectorTrainOpts};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    BaselineOnly,
    AblationSweep,
    HybridSweep,
}

impl FromStr for Mode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Mode::Train),
            "baseline-only" => Ok(Mode::BaselineOnly),
            "ablation-sweep" => Ok(Mode::AblationSweep),
            "hybrid-sweep" => Ok(Mode::HybridSweep),
            _ => Err(CoreError::Configuration(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// One 14-day window per synthetic patient.
    Synthetic {
        patients: usize,
        seed: u64,
    },
    Csv {
        cgm: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectorSource {
    /// Trained on fingerstick-style sampling of extra synthetic patients.
    Synthetic {
        patients: usize,
        seed: u64,
    },
    /// Trained on real CGM/SMBG pairs.
    Csv {
        cgm: PathBuf,
        smbg: PathBuf,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub data: DataSource,
    pub split_seed: u64,
    pub plan: SamplingPlan,
    pub delta: usize,
    pub gamma_sweep: Vec<f64>,
    pub selector: SelectorSource,
    pub selector_model: AetcnConfig,
    pub selector_train: SelectorTrainOpts,
    pub model: DpaNetConfig,
    pub train: TrainConfig,
    /// Extra samplings per training window, cycled through across epochs.
    pub train_resamples: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Train,
            data: DataSource::Synthetic { patients: 20, seed: 0 },
            split_seed: 0,
            plan: SamplingPlan {
                strategy: SamplingStrategy::Hybrid { gamma_h: 0.4, rate: DEFAULT_RATE, k_per_day: DEFAULT_K },
                seed: 0,
            },
            delta: DEFAULT_DELTA,
            gamma_sweep: vec![0.2, 0.4, 0.8],
            selector: SelectorSource::Synthetic { patients: 4, seed: 1_000_000 },
            selector_model: AetcnConfig { hidden: 16, ..AetcnConfig::default() },
            selector_train: SelectorTrainOpts { epochs: 60, lr: 1e-2, ..SelectorTrainOpts::default() },
            model: DpaNetConfig::default(),
            train: TrainConfig::default(),
            train_resamples: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment. Repeated keys are an error.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CoreError::Configuration(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.insert(k.clone(), v).is_some() {
            return Err(CoreError::Configuration(format!("line {}: key {} repeated", i + 1, k)));
        }
    }
    Ok(out)
}

struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| CoreError::Configuration(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: FromStr>(&mut self, key: &str, slot: &mut Vec<T>) -> Result<()> {
        if let Some(v) = self.0.remove(key) {
            *slot = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CoreError::Configuration(format!("{key}: cannot parse list {v:?}")))?;
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Pairs(parse_pairs(text)?);
        let mut c = Self::default();
        p.set("experiment.mode", &mut c.mode)?;
        p.set("experiment.out_dir", &mut c.out_dir)?;

        let source: String = p.take("data.source")?.unwrap_or_else(|| "synthetic".into());
        c.data = match source.as_str() {
            "synthetic" => {
                let mut patients = 20;
                let mut seed = 0;
                p.set("data.patients", &mut patients)?;
                p.set("data.seed", &mut seed)?;
                DataSource::Synthetic { patients, seed }
            }
            "csv" => DataSource::Csv {
                cgm: p
                    .take("data.cgm_csv")?
                    .ok_or_else(|| CoreError::Configuration("data.cgm_csv is required".into()))?,
            },
            other => return Err(CoreError::Configuration(format!("unknown data.source {other:?}"))),
        };
        p.set("data.split_seed", &mut c.split_seed)?;

        let strategy: String = p.take("sampling.strategy")?.unwrap_or_else(|| "hybrid".into());
        let mut rate = DEFAULT_RATE;
        let mut gamma_h = 0.4;
        let mut k = DEFAULT_K;
        let mut seed = 0;
        p.set("sampling.rate", &mut rate)?;
        p.set("sampling.gamma_h", &mut gamma_h)?;
        p.set("sampling.k", &mut k)?;
        p.set("sampling.seed", &mut seed)?;
        p.set("sampling.delta", &mut c.delta)?;
        p.list("sampling.gamma_sweep", &mut c.gamma_sweep)?;
        let strategy = match strategy.as_str() {
            "random" => SamplingStrategy::Random { rate },
            "hybrid" => SamplingStrategy::Hybrid { gamma_h, rate, k_per_day: k },
            "active" => SamplingStrategy::Active { k_per_day: k },
            other => return Err(CoreError::Configuration(format!("unknown sampling.strategy {other:?}"))),
        };
        c.plan = SamplingPlan::new(strategy, seed)?;

        let sel: String = p.take("selector.source")?.unwrap_or_else(|| "synthetic".into());
        c.selector = match sel.as_str() {
            "synthetic" => {
                let (mut patients, mut seed) = (4, 1_000_000);
                p.set("selector.patients", &mut patients)?;
                p.set("selector.seed", &mut seed)?;
                SelectorSource::Synthetic { patients, seed }
            }
            "csv" => {
                let need =
                    |v: Option<PathBuf>, k: &str| v.ok_or_else(|| CoreError::Configuration(format!("{k} is required")));
                SelectorSource::Csv {
                    cgm: need(p.take("selector.cgm_csv")?, "selector.cgm_csv")?,
                    smbg: need(p.take("selector.smbg_csv")?, "selector.smbg_csv")?,
                }
            }
            "file" => SelectorSource::File(
                p.take("selector.path")?.ok_or_else(|| CoreError::Configuration("selector.path is required".into()))?,
            ),
            other => return Err(CoreError::Configuration(format!("unknown selector.source {other:?}"))),
        };
        p.set("selector.hidden", &mut c.selector_model.hidden)?;
        p.set("selector.blocks", &mut c.selector_model.num_blocks)?;
        p.list("selector.dilations", &mut c.selector_model.dilations)?;
        p.set("selector.epochs", &mut c.selector_train.epochs)?;
        p.set("selector.lr", &mut c.selector_train.lr)?;
        p.set("selector.batch_size", &mut c.selector_train.batch_size)?;
        p.set("selector.train_seed", &mut c.selector_train.seed)?;

        let m = &mut c.model;
        p.set("model.t_pool", &mut m.t_pool)?;
        p.set("model.pe_dim", &mut m.pe_dim)?;
        p.set("model.sca.channels", &mut m.sca.channels)?;
        p.set("model.sca.r_c", &mut m.sca.r_c)?;
        p.set("model.sca.r_s", &mut m.sca.r_s)?;
        p.set("model.sca.blocks", &mut m.sca.blocks)?;
        p.list("model.resnet.widths", &mut m.resnet.widths)?;
        p.list("model.resnet.strides", &mut m.resnet.strides)?;
        p.list("model.resnet.aspp_dilations", &mut m.resnet.aspp_dilations)?;
        p.set("model.resnet.aspp_channels", &mut m.resnet.aspp_channels)?;
        c.selector_model.pe_dim = m.pe_dim;

        let w: &mut LossWeights = &mut c.train.weights;
        p.set("loss.lambda_rc", &mut w.rc)?;
        p.set("loss.lambda_tr", &mut w.tr)?;
        p.set("loss.lambda_a", &mut w.a)?;
        p.set("loss.temperature", &mut w.temperature)?;
        p.set("loss.stop_grad_alignment", &mut w.stop_grad_alignment)?;

        let t = &mut c.train;
        p.set("train.epochs", &mut t.epochs)?;
        p.set("train.batch_size", &mut t.batch_size)?;
        p.set("train.lr", &mut t.lr)?;
        p.set("train.seed", &mut t.seed)?;
        p.set("train.shards", &mut t.shards)?;
        p.set("train.resamples", &mut c.train_resamples)?;
        p.set("train.final_lr_factor", &mut t.final_lr_factor)?;
        p.set::<Ablation>("train.ablation", &mut t.ablation)?;

        if let Some(k) = p.0.keys().next() {
            return Err(CoreError::Configuration(format!("unknown key {k}")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.selector_model.validate()?;
        self.train.validate()?;
        if let DataSource::Synthetic { patients, .. } = self.data {
            if patients < 3 {
                return Err(CoreError::Configuration("data.patients must be at least 3".into()));
            }
        }
        if self.mode == Mode::HybridSweep && self.gamma_sweep.is_empty() {
            return Err(CoreError::Configuration("sampling.gamma_sweep is empty".into()));
        }
        for g in &self.gamma_sweep {
            if !(0.0..=1.0).contains(g) {
                return Err(CoreError::Configuration(format!("gamma_h {g} outside [0, 1]")));
            }
        }
        Ok(())
    }
}
